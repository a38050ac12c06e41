//! Dormand–Prince 5(4) stepping for `y′ = v, v′ = −F(x, y)ρ(x)`.

use super::{IvpError, StepControl};
use crate::expr::EvalError;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

type State = [f64; 2];

fn axpy(s: State, h: f64, terms: &[(f64, State)]) -> State {
    let mut out = s;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// Integrate from `x0` to `x1` on one smooth piece, pushing each accepted
/// node `(x, y, v)` into `out`. `h` carries the step size between calls.
pub(super) fn integrate<R>(
    rhs: &R,
    x0: f64,
    x1: f64,
    start: State,
    h: &mut f64,
    ctrl: &StepControl,
    out: &mut Vec<(f64, f64, f64)>,
) -> Result<State, IvpError>
where
    R: Fn(f64, f64) -> Result<f64, EvalError>,
{
    let f = |x: f64, s: State| -> Result<State, IvpError> { Ok([s[1], rhs(x, s[0])?]) };
    let mut x = x0;
    let mut s = start;
    let mut k1 = f(x, s)?;
    let span = x1 - x0;
    if *h <= 0.0 || !h.is_finite() {
        *h = initial_step(span, ctrl);
    }
    while x < x1 {
        let mut step = h.min(ctrl.max_step);
        let last = x + step >= x1 || x1 - (x + step) < 1e-12 * span;
        if last {
            step = x1 - x;
        }
        let k2 = f(x + C2 * step, axpy(s, step, &[(A21, k1)]))?;
        let k3 = f(x + C3 * step, axpy(s, step, &[(A31, k1), (A32, k2)]))?;
        let k4 = f(x + C4 * step, axpy(s, step, &[(A41, k1), (A42, k2), (A43, k3)]))?;
        let k5 = f(
            x + C5 * step,
            axpy(s, step, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]),
        )?;
        let k6 = f(
            x + step,
            axpy(s, step, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]),
        )?;
        let next = axpy(s, step, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
        let xn = if last { x1 } else { x + step };
        let k7 = f(xn, next)?;

        let mut err = 0.0f64;
        for i in 0..2 {
            let e = step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = ctrl.atol + ctrl.rtol * s[i].abs().max(next[i].abs());
            err = err.max((e / scale).abs());
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err <= 1.0 {
            x = xn;
            s = next;
            k1 = k7;
            if !(s[0].abs() <= ctrl.bound) {
                return Err(IvpError::BlowUp { x, y: s[0] });
            }
            out.push((x, s[0], s[1]));
            if !last {
                *h = step * factor;
            }
        } else {
            *h = step * factor.min(1.0);
            if *h < ctrl.min_step {
                return Err(IvpError::StepUnderflow { x, h: *h });
            }
        }
    }
    Ok(s)
}

fn initial_step(span: f64, ctrl: &StepControl) -> f64 {
    (span / 100.0).min(ctrl.max_step).max(ctrl.min_step)
}
