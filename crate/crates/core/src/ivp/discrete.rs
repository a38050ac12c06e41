//! Second-order difference equations on the integers.

use serde::Serialize;

use super::IvpError;
use crate::expr::Expr;

/// `y₀ … y_N` from `y_{n+1} = 2y_n − y_{n−1} − b_n F(n, y_n)`.
///
/// `b` is a sequence expression in `n`; `F` is evaluated at `x = n`.
pub fn solve_recurrence(f: &Expr, b: &Expr, y0: f64, y1: f64, n_max: usize) -> Result<Vec<f64>, IvpError> {
    if n_max < 2 {
        return Err(IvpError::TooShort(n_max));
    }
    let mut y = Vec::with_capacity(n_max + 1);
    y.push(y0);
    y.push(y1);
    for n in 1..n_max {
        let x = n as f64;
        let next = 2.0 * y[n] - y[n - 1] - b.eval_x(x)? * f.eval(x, y[n])?;
        if !next.is_finite() {
            return Err(IvpError::NonFiniteIterate { n: n + 1 });
        }
        y.push(next);
    }
    Ok(y)
}

/// Weights `α₀ … α_N` and coefficients `β₁ … β_N`.
///
/// `beta[i]` holds `β_{i+1}`, since `β₀` would need `c₋₁`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Normalization {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Bring `c_n y_{n+1} + c_{n−1} y_{n−1} + b_n y_n = 0` to
/// `Δ²z_{n−1} + β_n z_n = 0` via `y_n = α_n z_n`.
///
/// With `α_{n+1} = (c_{n−1}/c_n) α_{n−1}` both outer coefficients equal
/// `c_{n−1}α_{n−1}`, so `β_n = 2 + b_n α_n / (c_{n−1} α_{n−1})`. The result is
/// checked by running both recurrences from the same data.
pub fn three_term_normalize(
    c: &Expr,
    b: &Expr,
    alpha0: f64,
    alpha1: f64,
    n_max: usize,
) -> Result<Normalization, IvpError> {
    if n_max < 2 {
        return Err(IvpError::TooShort(n_max));
    }
    for (n, a) in [(0, alpha0), (1, alpha1)] {
        if a == 0.0 {
            return Err(IvpError::ZeroWeight { n });
        }
    }
    let cs = (0..=n_max)
        .map(|n| {
            let v = c.eval_x(n as f64)?;
            if v == 0.0 {
                Err(IvpError::ZeroCoefficient { n })
            } else {
                Ok(v)
            }
        })
        .collect::<Result<Vec<f64>, IvpError>>()?;
    let bs = (0..=n_max)
        .map(|n| b.eval_x(n as f64).map_err(IvpError::from))
        .collect::<Result<Vec<f64>, IvpError>>()?;

    let mut alpha = vec![alpha0, alpha1];
    for n in 1..n_max {
        let next = cs[n - 1] / cs[n] * alpha[n - 1];
        if next == 0.0 || !next.is_finite() {
            return Err(IvpError::ZeroWeight { n: n + 1 });
        }
        alpha.push(next);
    }
    let beta: Vec<f64> = (1..=n_max)
        .map(|n| 2.0 + bs[n] * alpha[n] / (cs[n - 1] * alpha[n - 1]))
        .collect();

    back_substitute(&cs, &bs, &alpha, &beta)?;
    Ok(Normalization { alpha, beta })
}

fn back_substitute(c: &[f64], b: &[f64], alpha: &[f64], beta: &[f64]) -> Result<(), IvpError> {
    let n_max = alpha.len() - 1;
    let mut z = vec![1.0, 0.5];
    for n in 1..n_max {
        z.push(2.0 * z[n] - z[n - 1] - beta[n - 1] * z[n]);
    }
    let y: Vec<f64> = z.iter().zip(alpha).map(|(z, a)| z * a).collect();
    for n in 1..n_max {
        let terms = [c[n] * y[n + 1], c[n - 1] * y[n - 1], b[n] * y[n]];
        let scale = terms.iter().map(|t| t.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let residual = terms.iter().sum::<f64>().abs() / scale;
        if !(residual <= 1e-9) {
            return Err(IvpError::BackSubstitution { n, residual });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, parse_sequence};
    use proptest::prelude::*;

    fn seq(s: &str) -> Expr {
        parse_sequence(s).unwrap()
    }

    #[test]
    fn zero_curvature() {
        let y = solve_recurrence(&parse_expr("y").unwrap(), &seq("0"), 1.0, 3.0, 6).unwrap();
        assert_eq!(y, vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0]);
    }

    #[test]
    fn hand_computed_iterates() {
        let f = parse_expr("y").unwrap();
        let y = solve_recurrence(&f, &seq("-1"), 0.0, 1.0, 3).unwrap();
        assert_eq!(&y[2..], &[3.0, 8.0]);
        let y = solve_recurrence(&f, &seq("1"), 1.0, 1.0, 3).unwrap();
        assert_eq!(&y[2..], &[0.0, -1.0]);
    }

    #[test]
    fn recurrence_errors() {
        let f = parse_expr("y").unwrap();
        assert!(matches!(solve_recurrence(&f, &seq("1"), 1.0, 1.0, 1), Err(IvpError::TooShort(1))));
        let g = parse_expr("exp(y)").unwrap();
        assert!(solve_recurrence(&g, &seq("-100"), 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn unit_coefficients_shift_by_two() {
        let norm = three_term_normalize(&seq("1"), &seq("n/3 - 1"), 1.0, 1.0, 8).unwrap();
        assert!(norm.alpha.iter().all(|&a| a == 1.0));
        for (i, beta) in norm.beta.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((beta - 2.0 - (n / 3.0 - 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_alternate_for_unit_coefficients() {
        let norm = three_term_normalize(&seq("1"), &seq("0.5"), 2.0, -3.0, 7).unwrap();
        assert_eq!(norm.alpha, vec![2.0, -3.0, 2.0, -3.0, 2.0, -3.0, 2.0, -3.0]);
    }

    #[test]
    fn minimal_case() {
        let norm = three_term_normalize(&seq("n + 1"), &seq("1"), 1.0, 2.0, 2).unwrap();
        assert_eq!(norm.alpha.len(), 3);
        assert_eq!(norm.alpha[2], 1.0 / 2.0 * 1.0);
        assert_eq!(norm.beta.len(), 2);
    }

    #[test]
    fn zero_coefficient_rejected() {
        assert!(matches!(
            three_term_normalize(&seq("n - 2"), &seq("1"), 1.0, 1.0, 5),
            Err(IvpError::ZeroCoefficient { n: 2 })
        ));
        assert!(matches!(
            three_term_normalize(&seq("1"), &seq("1"), 0.0, 1.0, 5),
            Err(IvpError::ZeroWeight { n: 0 })
        ));
    }

    proptest! {
        // independent check: the y built from z solves the original relation
        #[test]
        fn back_substitution_on_random_sequences(
            c in prop::collection::vec(0.5f64..2.0, 12),
            b in prop::collection::vec(-1.0f64..1.0, 12),
            a0 in 0.5f64..2.0,
            a1 in 0.5f64..2.0,
        ) {
            let list = |v: &[f64]| {
                // piecewise table as a sum of indicator bumps in n
                let mut s = String::from("0");
                for (i, x) in v.iter().enumerate() {
                    s.push_str(&format!(" + ({x:?})*max(0, 1 - abs(n - {i}))"));
                }
                parse_sequence(&s).unwrap()
            };
            let (ce, be) = (list(&c), list(&b));
            let norm = three_term_normalize(&ce, &be, a0, a1, 11).unwrap();
            let mut z = vec![0.3, -0.8];
            for n in 1..11 {
                z.push(2.0 * z[n] - z[n - 1] - norm.beta[n - 1] * z[n]);
            }
            for n in 1..11 {
                let y = |k: usize| norm.alpha[k] * z[k];
                let r = c[n] * y(n + 1) + c[n - 1] * y(n - 1) + b[n] * y(n);
                let scale = (c[n] * y(n + 1)).abs().max((c[n - 1] * y(n - 1)).abs()).max(1e-300);
                prop_assert!(r.abs() / scale < 1e-9);
            }
        }
    }
}
