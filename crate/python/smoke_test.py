"""Smoke test for the vsie_py extension module."""

import math

import vsie_py as v


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    close(v.eval_expr("x^2 + y", 3.0, 1.0), 10.0, 0.0)

    leb = v.Measure.lebesgue(1.0)
    close(leb.integrate("x", 1.0, 3.0), 4.0, 1e-12)
    close(v.Measure(0.0, atoms=[(1.0, -1.0), (2.0, 1.0)]).total_variation(0.0, 3.0), 2.0, 1e-12)

    # y'' + (x+1)^-4 = -sin x, exact y = sin x - 1/(6(x+1)^2)
    p = v.Problem("(x + 1)^-4 + sin(x)", v.Measure.lebesgue(0.0))
    sol = v.solve_ivp(p, -1.0 / 6.0, 4.0 / 3.0, 0.0, 20.0)
    err = max(abs(y - (math.sin(x) - 1 / (6 * (x + 1) ** 2))) for x, y in zip(sol.grid, sol.y))
    assert err < 1e-6, err

    q = v.Problem("y/x^4", v.Measure.lebesgue(1.0), k="1/x^4", f="1 + 1/(6*x^2)")
    fp, report = v.picard_solve(q, start=0.5)
    assert report["converged"], report
    assert max(abs(y - 1.0) for y in fp.y) < 1e-8

    close(v.check_contraction("1/x^5", v.Measure.lebesgue(1.0), 3.0)["value"], 1 / 81, 1e-6)
    close(v.find_x0("x^2/2", "1/x^5", "(1 + y)/x^5", v.Measure.lebesgue(1.0), 0.5), 2.0, 0.01)
    assert v.nehari_check("y/x", v.Measure.lebesgue(1.0), 1.0, 1.0)["holds"] != "holds"

    y = v.solve_recurrence("y", "1", 1.0, 1.0, 10)
    assert y[2:4] == [0.0, -1.0], y
    alpha, beta = v.three_term_normalize("n + 1", "1", 1.0, 2.0, 2)
    assert len(alpha) == 3 and len(beta) == 2

    osc = v.solve_ivp(v.Problem("y", v.Measure.lebesgue(0.0)), 0.0, 1.0, 0.0, 60.0)
    assert osc.classify()["class"]["kind"] == "Oscillatory"
    assert all(abs(e - 0.5) < 1e-8 for _, e in osc.energy("1"))
    print("smoke test passed")


if __name__ == "__main__":
    main()
