//! End-behaviour classification of computed solutions and the energy
//! diagnostic `E(x) = ½y′² + ∫₀^y η G(x, η) dη`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::ivp::{fmt_num, Solution};
use crate::quadrature::{gauss_kronrod, QuadError, DEFAULT_SUBDIVISIONS};

pub const DEFAULT_WINDOW: f64 = 0.25;
/// Fewest grid nodes accepted inside the fit window.
const MIN_WINDOW_NODES: usize = 8;
/// Share of window nodes that must satisfy the sign conditions.
const SIGN_SHARE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticsError {
    #[error("fit window fraction {0} must lie in (0, 0.25]")]
    BadWindow(f64),
    #[error("fit window holds {found} nodes, need at least {needed}")]
    WindowTooShort { found: usize, needed: usize },
    #[error("least-squares fit failed: {0}")]
    Fit(&'static str),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum AsymptoticClass {
    Linear { a: f64, b: f64 },
    Constant { b: f64 },
    AsymptoticToF { residual: f64 },
    NegativeConvexDecreasing,
    Oscillatory { sign_changes: usize },
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub class: AsymptoticClass,
    pub fit_window: (f64, f64),
    /// Residual RMS on the later half of the window over the earlier half.
    pub residual_trend: f64,
}

struct Fit {
    a: f64,
    b: f64,
    rms_first: f64,
    rms_second: f64,
    rms: f64,
}

/// Least squares for `y ≈ Ax + B + C/x`; the `C/x` column absorbs the
/// leading `o(1)` correction.
fn fit_line(xs: &[f64], ys: &[f64]) -> Result<Fit, AsymptoticsError> {
    let n = xs.len();
    // centre and scale x so the columns are well conditioned
    let (lo, hi) = (xs[0], xs[n - 1]);
    let mid = 0.5 * (lo + hi);
    let half = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let use_inverse = lo > 0.0 || hi < 0.0;
    let cols = if use_inverse { 3 } else { 2 };
    let inv_scale = if use_inverse { lo.abs().min(hi.abs()) } else { 1.0 };
    let a = DMatrix::from_fn(n, cols, |i, j| match j {
        0 => (xs[i] - mid) / half,
        1 => 1.0,
        _ => inv_scale / xs[i],
    });
    let rhs = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&rhs, 1e-13).map_err(AsymptoticsError::Fit)?;
    let slope = coef[0] / half;
    let intercept = coef[1] - slope * mid;
    let resid = rhs - a * &coef;
    let rms = |r: &[f64]| (r.iter().map(|v| v * v).sum::<f64>() / r.len().max(1) as f64).sqrt();
    let r = resid.as_slice();
    Ok(Fit {
        a: slope,
        b: intercept,
        rms_first: rms(&r[..n / 2]),
        rms_second: rms(&r[n / 2..]),
        rms: rms(r),
    })
}

fn window_indices(s: &Solution, fraction: f64) -> Result<(usize, f64, f64), AsymptoticsError> {
    if !(fraction > 0.0 && fraction <= DEFAULT_WINDOW) {
        return Err(AsymptoticsError::BadWindow(fraction));
    }
    if s.len() < MIN_WINDOW_NODES {
        return Err(AsymptoticsError::WindowTooShort {
            found: s.len(),
            needed: MIN_WINDOW_NODES,
        });
    }
    let (start, end) = (s.start(), s.end());
    let lo = end - fraction * (end - start);
    let first = s.grid.partition_point(|&x| x < lo);
    let found = s.len() - first;
    if found < MIN_WINDOW_NODES {
        return Err(AsymptoticsError::WindowTooShort {
            found,
            needed: MIN_WINDOW_NODES,
        });
    }
    Ok((first, lo, end))
}

/// Sign changes of `y` over the nonzero samples, with zeros at nodes
/// counted once when the sign across them flips.
fn sign_flips(ys: &[f64]) -> usize {
    let mut count = 0;
    let mut last = 0.0f64;
    for &y in ys {
        if y == 0.0 {
            continue;
        }
        if last != 0.0 && (y > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = y;
    }
    count
}

/// Sign changes of `y` at grid nodes in `[a, b]`.
pub fn count_sign_changes(s: &Solution, a: f64, b: f64) -> usize {
    let ys: Vec<f64> = s
        .grid
        .iter()
        .zip(&s.y)
        .filter(|(&x, _)| x >= a && x <= b)
        .map(|(_, &y)| y)
        .collect();
    sign_flips(&ys)
}

/// Interpolated zero locations in the slice.
fn zeros(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    for (&x, &y) in xs.iter().zip(ys) {
        if y == 0.0 {
            continue;
        }
        if let Some((x0, y0)) = last {
            if (y > 0.0) != (y0 > 0.0) {
                out.push(x0 + (x - x0) * y0 / (y0 - y));
            }
        }
        last = Some((x, y));
    }
    out
}

/// Classify the tail of `s`; `window_fraction` is the trailing share of the
/// grid span used for the fit.
pub fn classify(s: &Solution, f: Option<&Expr>, window_fraction: f64) -> Result<Classification, AsymptoticsError> {
    let (first, lo, hi) = window_indices(s, window_fraction)?;
    let xs = &s.grid[first..];
    let ys = &s.y[first..];
    let yp = &s.yprime_right[first..];
    let span = hi - lo;
    let fit = fit_line(xs, ys)?;
    let residual_trend = if fit.rms_first > 0.0 {
        fit.rms_second / fit.rms_first
    } else {
        0.0
    };
    let done = |class| {
        Ok(Classification {
            class,
            fit_window: (lo, hi),
            residual_trend,
        })
    };

    let zs = zeros(xs, ys);
    if zs.len() >= 3 {
        let gaps: Vec<f64> = zs.windows(2).map(|w| w[1] - w[0]).collect();
        let half = gaps.len() / 2;
        let early = gaps[..half.max(1)].iter().sum::<f64>() / half.max(1) as f64;
        let late_slice = &gaps[gaps.len() - half.max(1)..];
        let late = late_slice.iter().sum::<f64>() / late_slice.len() as f64;
        if late <= 1.1 * early {
            return done(AsymptoticClass::Oscillatory {
                sign_changes: count_sign_changes(s, s.start(), s.end()),
            });
        }
    }

    if let Some(f) = f {
        let fv = xs.iter().map(|&x| f.eval_x(x)).collect::<Result<Vec<f64>, _>>()?;
        let r: Vec<f64> = ys.iter().zip(&fv).map(|(y, f)| (y - f).abs() / (1.0 + f.abs())).collect();
        let n = r.len();
        let sup = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let (early, late) = (sup(&r[..n / 2]), sup(&r[n / 2..]));
        if late < early && late < 1.0 {
            return done(AsymptoticClass::AsymptoticToF { residual: late });
        }
    }

    let scale = 1.0 + ys.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if fit.rms <= 1e-4 * scale {
        let h = xs.len() / 2;
        let slopes_agree = match (fit_line(&xs[..h], &ys[..h]), fit_line(&xs[h..], &ys[h..])) {
            (Ok(f1), Ok(f2)) => (f1.a - f2.a).abs() <= 1e-3 * (fit.a.abs() + (1.0 + fit.b.abs()) / span),
            _ => false,
        };
        if slopes_agree {
            if fit.a.abs() < 1e-6 * (1.0 + fit.b.abs()) / span {
                return done(AsymptoticClass::Constant { b: fit.b });
            }
            return done(AsymptoticClass::Linear { a: fit.a, b: fit.b });
        }
    }

    let n = xs.len();
    let good = (0..n)
        .filter(|&i| {
            let convex = if i + 1 < n { yp[i + 1] >= yp[i] } else { yp[i] >= yp[i - 1] };
            ys[i] < 0.0 && yp[i] <= 0.0 && convex
        })
        .count();
    if good as f64 >= SIGN_SHARE * n as f64 {
        return done(AsymptoticClass::NegativeConvexDecreasing);
    }
    done(AsymptoticClass::Undetermined)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyPoint {
    pub x: f64,
    pub energy: f64,
    /// `y′(x)g(x)`, the bound on `E′` for unforced-decreasing `G`.
    pub work: f64,
}

/// `E(x) = ½y′² + ∫₀^{y(x)} η G(x, η) dη` at every grid node.
pub fn energy_profile(s: &Solution, big_g: &Expr, g: &Expr) -> Result<Vec<EnergyPoint>, AsymptoticsError> {
    s.grid
        .iter()
        .zip(&s.y)
        .zip(&s.yprime_right)
        .map(|((&x, &y), &yp)| {
            let (lo, hi, sign) = if y >= 0.0 { (0.0, y, 1.0) } else { (y, 0.0, -1.0) };
            let scale = 1.0 + y * y;
            let (inner, _) = gauss_kronrod(|eta| Ok(eta * big_g.eval(x, eta)?), lo, hi, 1e-13 * scale, DEFAULT_SUBDIVISIONS)?;
            Ok(EnergyPoint {
                x,
                energy: 0.5 * yp * yp + sign * inner,
                work: yp * g.eval_x(x)?,
            })
        })
        .collect()
}

/// CSV with header `x,E,work`.
pub fn energy_csv(points: &[EnergyPoint]) -> String {
    let mut out = String::from("x,E,work\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", fmt_num(p.x), fmt_num(p.energy), fmt_num(p.work)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, parse_sequence};
    use crate::ivp::{solve_recurrence, Method};
    use proptest::prelude::*;

    fn ex(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn linear_example(c: f64) -> Solution {
        Solution::tabulate(1.0, 200.0, 2000, |x| c * (2.0 * x + 3.0 + 1.0 / x), |x| c * (2.0 - 1.0 / (x * x)))
    }

    #[test]
    fn linear_with_decaying_term() {
        let c = classify(&linear_example(1.0), None, DEFAULT_WINDOW).unwrap();
        match c.class {
            AsymptoticClass::Linear { a, b } => {
                assert!((a - 2.0).abs() < 1e-3 && (b - 3.0).abs() < 1e-3);
            }
            other => panic!("got {other:?}"),
        }
        assert!((c.fit_window.0 - 150.25).abs() < 1e-9);
    }

    #[test]
    fn constant_solution() {
        let s = Solution::tabulate(0.0, 100.0, 400, |_| 4.5, |_| 0.0);
        let c = classify(&s, None, DEFAULT_WINDOW).unwrap();
        assert!(matches!(c.class, AsymptoticClass::Constant { b } if (b - 4.5).abs() < 1e-12));
    }

    #[test]
    fn sine_oscillates() {
        let s = Solution::tabulate(0.0, 60.0, 6001, f64::sin, f64::cos);
        let c = classify(&s, None, DEFAULT_WINDOW).unwrap();
        match c.class {
            AsymptoticClass::Oscillatory { sign_changes } => assert!(sign_changes >= 17, "{sign_changes}"),
            other => panic!("got {other:?}"),
        }
    }

    #[test]
    fn asymptotic_to_forcing() {
        let s = Solution::tabulate(3.0, 300.0, 1000, |x| x * x / 2.0 - 1.0 / (4.0 * x), |x| x + 1.0 / (4.0 * x * x));
        let c = classify(&s, Some(&ex("x^2/2")), DEFAULT_WINDOW).unwrap();
        assert!(matches!(c.class, AsymptoticClass::AsymptoticToF { .. }));
    }

    #[test]
    fn negative_convex_decreasing() {
        let s = Solution::tabulate(1.0, 400.0, 1000, |x| -x.sqrt(), |x| -0.5 / x.sqrt());
        let c = classify(&s, None, DEFAULT_WINDOW).unwrap();
        assert_eq!(c.class, AsymptoticClass::NegativeConvexDecreasing);
    }

    #[test]
    fn quadratic_growth_is_undetermined() {
        let s = Solution::tabulate(1.0, 100.0, 500, |x| x * x, |x| 2.0 * x);
        assert_eq!(classify(&s, None, DEFAULT_WINDOW).unwrap().class, AsymptoticClass::Undetermined);
    }

    #[test]
    fn window_errors() {
        let s = Solution::tabulate(0.0, 1.0, 10, |x| x, |_| 1.0);
        assert!(matches!(classify(&s, None, 0.5), Err(AsymptoticsError::BadWindow(_))));
        assert!(matches!(classify(&s, None, 0.25), Err(AsymptoticsError::WindowTooShort { .. })));
    }

    #[test]
    fn sign_change_examples() {
        let s = Solution::tabulate(0.0, 10.0, 11, |x| x - 5.0, |_| 1.0);
        assert_eq!(count_sign_changes(&s, 0.0, 10.0), 1);
        let s = Solution::tabulate(0.0, 10.0, 11, |_| 1.0, |_| 0.0);
        assert_eq!(count_sign_changes(&s, 0.0, 10.0), 0);
        let y = solve_recurrence(&ex("y"), &parse_sequence("1").unwrap(), 1.0, 1.0, 10).unwrap();
        let grid: Vec<f64> = (0..=10).map(f64::from).collect();
        let s = Solution::from_samples(grid, y, vec![0.0; 11], Method::Recurrence);
        assert!(count_sign_changes(&s, 0.0, 10.0) >= 2);
    }

    #[test]
    fn energy_examples() {
        let s = Solution::tabulate(0.0, 20.0, 201, f64::sin, f64::cos);
        for p in energy_profile(&s, &ex("1"), &ex("0")).unwrap() {
            assert!((p.energy - 0.5).abs() < 1e-12);
        }
        let s = Solution::tabulate(0.0, 5.0, 11, |_| 0.0, |_| 0.0);
        assert!(energy_profile(&s, &ex("1 + x"), &ex("0")).unwrap().iter().all(|p| p.energy == 0.0));
        let s = Solution::tabulate(0.0, 5.0, 11, |x| x, |_| 1.0);
        assert!(energy_profile(&s, &ex("0"), &ex("0")).unwrap().iter().all(|p| p.energy == 0.5));
    }

    proptest! {
        #[test]
        fn classification_is_scale_equivariant(c in 0.1f64..10.0) {
            match classify(&linear_example(c), None, DEFAULT_WINDOW).unwrap().class {
                AsymptoticClass::Linear { a, b } => {
                    prop_assert!((a - 2.0 * c).abs() < 1e-3 * c);
                    prop_assert!((b - 3.0 * c).abs() < 1e-3 * c);
                }
                other => prop_assert!(false, "got {:?}", other),
            }
            let s = Solution::tabulate(0.0, 60.0, 3001, |x| c * x.sin(), |x| c * x.cos());
            let base = Solution::tabulate(0.0, 60.0, 3001, f64::sin, f64::cos);
            prop_assert_eq!(
                classify(&s, None, DEFAULT_WINDOW).unwrap().class,
                classify(&base, None, DEFAULT_WINDOW).unwrap().class
            );
        }
    }
}
