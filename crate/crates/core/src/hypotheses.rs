//! Numerical checks of the integral hypotheses behind the solvers.
//!
//! Universally quantified conditions are tested on finite sample grids and
//! the grid is recorded in the report: a pass means "holds on the tested
//! grid". Tail integrals that do not converge within budget yield
//! [`Verdict::Unknown`].

use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::measure::Measure;
use crate::quadrature::{tail_integral_with, Integrator, QuadError, TailResult, DEFAULT_TAIL_BUDGET};

/// Absolute slack for inequality checks.
pub const SLACK: f64 = 1e-9;
/// Tolerance for the tail integrals of the checkers.
pub const CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HypothesisError {
    #[error("no admissible x0 below {search_hi}")]
    NoAdmissibleX0 { search_hi: f64 },
    #[error("tail integrals diverge on the whole search range up to {search_hi}")]
    DivergentTails { search_hi: f64 },
    #[error("u > v at x = {x} (u = {u}, v = {v})")]
    OrderViolated { x: f64, u: f64, v: f64 },
    #[error("invalid sample: {0}")]
    BadSample(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Unknown,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }

    pub fn is_holds(self) -> bool {
        self == Verdict::Holds
    }
}

/// Sample points `lo..=hi`, geometric when `log` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub log: bool,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        GridSpec {
            lo,
            hi,
            points,
            log: true,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let s = self.lo.abs().max(1.0);
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                if self.log {
                    self.lo + s * ((1.0 + (self.hi - self.lo) / s).powf(t) - 1.0)
                } else {
                    self.lo + (self.hi - self.lo) * t
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub name: String,
    pub holds: Verdict,
    pub value: f64,
    pub threshold: f64,
    pub detail: Vec<TailResult>,
    pub notes: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl HypothesisReport {
    pub fn new(name: &str, holds: Verdict, value: f64, threshold: f64) -> Self {
        HypothesisReport {
            name: name.to_string(),
            holds,
            value,
            threshold,
            detail: Vec::new(),
            notes: String::new(),
            grid: None,
        }
    }

    pub fn with_detail(mut self, detail: Vec<TailResult>) -> Self {
        self.detail = detail;
        self
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = Some(grid);
        self
    }
}

fn tail<G>(g: G, m: &Measure, x0: f64, mode: Integrator) -> Result<TailResult, HypothesisError>
where
    G: Fn(f64) -> Result<f64, EvalError>,
{
    Ok(tail_integral_with(g, m, x0, CHECK_TOL, DEFAULT_TAIL_BUDGET, mode)?)
}

/// Report for a tail integral compared against a threshold.
///
/// `strict` asks for `value < threshold`, otherwise `value ≤ threshold`.
/// An infinite threshold only asks for convergence.
pub fn tail_condition<G>(
    name: &str,
    g: G,
    m: &Measure,
    x0: f64,
    threshold: f64,
    strict: bool,
    mode: Integrator,
) -> HypothesisReport
where
    G: Fn(f64) -> Result<f64, EvalError>,
{
    match tail(g, m, x0, mode) {
        Ok(r) if r.converged => {
            let ok = if strict { r.value < threshold } else { r.value <= threshold };
            HypothesisReport::new(name, Verdict::from_bool(ok), r.value, threshold).with_detail(vec![r])
        }
        Ok(r) => HypothesisReport::new(name, Verdict::Unknown, r.value, threshold)
            .with_detail(vec![r])
            .with_notes(format!("tail not converged by x = {:e}; likely divergent", r.x_reached)),
        Err(e) => HypothesisReport::new(name, Verdict::Unknown, f64::NAN, threshold)
            .with_notes(format!("tail integral failed: {e}")),
    }
}

/// `∫_(x0,∞) t k(t) dσ(t) < 1`.
pub fn check_contraction(k: &Expr, m: &Measure, x0: f64) -> HypothesisReport {
    tail_condition("contraction", |t| Ok(t * k.eval_x(t)?), m, x0, 1.0, true, Integrator::Signed)
}

/// `∫_(x0,∞) t F(t, M) dσ(t) < ∞`.
pub fn nehari_check(f: &Expr, m: &Measure, big_m: f64, x0: f64) -> HypothesisReport {
    tail_condition("nehari", |t| Ok(t * f.eval(t, big_m)?), m, x0, f64::INFINITY, true, Integrator::Signed)
        .with_notes_if_empty(format!("M = {big_m}"))
}

/// `∫_(x0,∞) F(t, Mt) |dσ(t)| < ∞`.
pub fn linear_growth_check(f: &Expr, m: &Measure, big_m: f64, x0: f64) -> HypothesisReport {
    tail_condition(
        "linear_growth",
        |t| f.eval(t, big_m * t),
        m,
        x0,
        f64::INFINITY,
        true,
        Integrator::Variation,
    )
    .with_notes_if_empty(format!("M = {big_m}; integrated against |dσ|"))
}

/// `∫_(x0,∞) (t − x0) F(t, A) dσ(t) ≤ A/2`, the condition that keeps the
/// monotone scheme started at the constant `A` inside `[A/2, A]`.
pub fn monotone_scheme_check(f: &Expr, m: &Measure, a: f64, x0: f64) -> HypothesisReport {
    tail_condition(
        "monotone_scheme",
        |t| Ok((t - x0) * f.eval(t, a)?),
        m,
        x0,
        a / 2.0,
        false,
        Integrator::Signed,
    )
}

impl HypothesisReport {
    fn with_notes_if_empty(mut self, notes: String) -> Self {
        if self.notes.is_empty() {
            self.notes = notes;
        } else {
            self.notes = format!("{notes}; {}", self.notes);
        }
        self
    }
}

/// `max{∫_x^∞ (s−x)|f|k |dσ|, ∫_x^∞ (s−x)|F(s,0)| |dσ|}`; `None` when a tail
/// does not converge.
fn x0_functional(f: &Expr, k: &Expr, big_f: &Expr, m: &Measure, x: f64) -> Result<Option<(f64, Vec<TailResult>)>, HypothesisError> {
    let a = tail(
        |s| Ok((s - x) * f.eval_x(s)?.abs() * k.eval_x(s)?.abs()),
        m,
        x,
        Integrator::Variation,
    )?;
    let b = tail(|s| Ok((s - x) * big_f.eval(s, 0.0)?.abs()), m, x, Integrator::Variation)?;
    if a.converged && b.converged {
        Ok(Some((a.value.max(b.value), vec![a, b])))
    } else {
        Ok(None)
    }
}

/// The x0 condition at one point, as a report.
pub fn x0_condition(f: &Expr, k: &Expr, big_f: &Expr, m: &Measure, delta: f64, x: f64) -> HypothesisReport {
    match x0_functional(f, k, big_f, m, x) {
        Ok(Some((v, detail))) => {
            HypothesisReport::new("x0_condition", Verdict::from_bool(v <= delta / 4.0), v, delta / 4.0)
                .with_detail(detail)
                .with_notes(format!("at x = {x}"))
        }
        Ok(None) => HypothesisReport::new("x0_condition", Verdict::Unknown, f64::NAN, delta / 4.0)
            .with_notes(format!("tails did not converge at x = {x}")),
        Err(e) => HypothesisReport::new("x0_condition", Verdict::Unknown, f64::NAN, delta / 4.0)
            .with_notes(format!("at x = {x}: {e}")),
    }
}

/// Smallest `x ≥ domain_start` (to three significant digits) where both
/// moment tails are at most `δ/4`.
///
/// Points where an integrand cannot be evaluated count as inadmissible.
pub fn find_x0(f: &Expr, k: &Expr, big_f: &Expr, m: &Measure, delta: f64, search_hi: f64) -> Result<f64, HypothesisError> {
    if !(delta > 0.0) {
        return Err(HypothesisError::BadSample(format!("delta must be positive, got {delta}")));
    }
    let lo = m.domain_start();
    let mut any_converged = false;
    let mut admissible = |x: f64| -> bool {
        match x0_functional(f, k, big_f, m, x) {
            Ok(Some((v, _))) => {
                any_converged = true;
                v <= delta / 4.0
            }
            _ => false,
        }
    };
    if admissible(lo) {
        return Ok(lo);
    }
    let s = lo.abs().max(1.0);
    let mut prev = lo;
    let mut found = None;
    for j in 1.. {
        let x = lo + s * (2f64.powf(j as f64 / 4.0) - 1.0);
        if x > search_hi {
            break;
        }
        if admissible(x) {
            found = Some((prev, x));
            break;
        }
        prev = x;
    }
    let Some((mut a, mut b)) = found else {
        return Err(if any_converged {
            HypothesisError::NoAdmissibleX0 { search_hi }
        } else {
            HypothesisError::DivergentTails { search_hi }
        });
    };
    while b - a > 5e-4 * b.abs().max(1e-300) {
        let mid = 0.5 * (a + b);
        if admissible(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(b)
}

/// Sub/super-solution test: `u ≤ Tv` and `v ≥ Tu` at every grid point, where
/// `Tw(x) = f(x) − ∫_(x,∞) (t − x) F(t, w(t)) dσ(t)`.
pub fn verify_subsuper(
    u: &Expr,
    v: &Expr,
    f: &Expr,
    big_f: &Expr,
    m: &Measure,
    grid: &GridSpec,
) -> Result<HypothesisReport, HypothesisError> {
    let xs = grid.points();
    for &x in &xs {
        let (ux, vx) = (u.eval_x(x)?, v.eval_x(x)?);
        if ux > vx {
            return Err(HypothesisError::OrderViolated { x, u: ux, v: vx });
        }
    }
    let mut worst = f64::INFINITY;
    let mut worst_at = xs[0];
    let mut detail = Vec::new();
    for &x in &xs {
        let tv = tail(|t| Ok((t - x) * big_f.eval(t, v.eval_x(t)?)?), m, x, Integrator::Signed)?;
        let tu = tail(|t| Ok((t - x) * big_f.eval(t, u.eval_x(t)?)?), m, x, Integrator::Signed)?;
        if !(tv.converged && tu.converged) {
            return Ok(HypothesisReport::new("subsuper", Verdict::Unknown, f64::NAN, -SLACK)
                .with_detail(vec![tv, tu])
                .with_notes(format!("tail did not converge at x = {x}"))
                .with_grid(*grid));
        }
        let fx = f.eval_x(x)?;
        let lower = fx - tv.value - u.eval_x(x)?;
        let upper = v.eval_x(x)? - (fx - tu.value);
        let margin = lower.min(upper);
        if margin < worst {
            worst = margin;
            worst_at = x;
            detail = vec![tv, tu];
        }
    }
    Ok(HypothesisReport::new("subsuper", Verdict::from_bool(worst >= -SLACK), worst, -SLACK)
        .with_detail(detail)
        .with_notes(format!("worst margin at x = {worst_at}"))
        .with_grid(*grid))
}

/// `y₂^{−ε} F(x, y₂) > y₁^{−ε} F(x, y₁)` on every sample; the value is the
/// worst margin.
pub fn superlinearity_check(big_f: &Expr, eps: f64, xs: &[f64], pairs: &[(f64, f64)]) -> Result<HypothesisReport, HypothesisError> {
    for &(y1, y2) in pairs {
        if !(0.0 < y1 && y1 < y2) {
            return Err(HypothesisError::BadSample(format!("need 0 < y1 < y2, got ({y1}, {y2})")));
        }
    }
    if xs.is_empty() || pairs.is_empty() {
        return Err(HypothesisError::BadSample("empty sample set".into()));
    }
    let mut worst = f64::INFINITY;
    for &x in xs {
        for &(y1, y2) in pairs {
            let margin = y2.powf(-eps) * big_f.eval(x, y2)? - y1.powf(-eps) * big_f.eval(x, y1)?;
            worst = worst.min(margin);
        }
    }
    Ok(HypothesisReport::new("superlinearity", Verdict::from_bool(worst > SLACK), worst, SLACK)
        .with_notes(format!("eps = {eps}; {} x samples, {} pairs", xs.len(), pairs.len())))
}

/// `|f| ≥ δ` on the grid; the value is the smallest `|f|`.
pub fn forcing_lower_bound(f: &Expr, delta: f64, grid: &GridSpec) -> Result<HypothesisReport, HypothesisError> {
    let mut least = f64::INFINITY;
    for x in grid.points() {
        least = least.min(f.eval_x(x)?.abs());
    }
    Ok(HypothesisReport::new("forcing_lower_bound", Verdict::from_bool(delta > 0.0 && least >= delta), least, delta).with_grid(*grid))
}

/// `|F(x,u) − F(x,v)| ≤ k(x)|u − v|` sampled with `|u|, |v| ≤ 2|f(x)|`
/// (or `≤ 1` without `f`); the value is the largest observed ratio.
pub fn lipschitz_envelope(big_f: &Expr, k: &Expr, f: Option<&Expr>, grid: &GridSpec) -> Result<HypothesisReport, HypothesisError> {
    const LEVELS: usize = 9;
    let mut worst = 0.0f64;
    for x in grid.points() {
        let r = match f {
            Some(f) => 2.0 * f.eval_x(x)?.abs(),
            None => 1.0,
        }
        .max(1e-12);
        let kx = k.eval_x(x)?;
        let ys: Vec<f64> = (0..LEVELS).map(|i| -r + 2.0 * r * i as f64 / (LEVELS - 1) as f64).collect();
        for (i, &a) in ys.iter().enumerate() {
            for &b in &ys[i + 1..] {
                let diff = (big_f.eval(x, a)? - big_f.eval(x, b)?).abs();
                let bound = kx * (a - b).abs();
                let ratio = if bound > 0.0 {
                    diff / bound
                } else if diff > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                worst = worst.max(ratio);
            }
        }
    }
    Ok(HypothesisReport::new("lipschitz_envelope", Verdict::from_bool(worst <= 1.0 + SLACK), worst, 1.0)
        .with_grid(*grid)
        .with_notes(format!("{LEVELS} levels per point")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, parse_sequence};

    fn ex(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn contraction_examples() {
        let m = Measure::lebesgue(0.0);
        let r = check_contraction(&ex("1/x^5"), &m, 3.0);
        assert_eq!(r.holds, Verdict::Holds);
        assert!((r.value - 1.0 / 81.0).abs() < 1e-9);
        assert_eq!(check_contraction(&ex("1/x"), &m, 1.0).holds, Verdict::Unknown);
        let r = check_contraction(&ex("0"), &m, 1.0);
        assert_eq!((r.holds, r.value), (Verdict::Holds, 0.0));
    }

    #[test]
    fn nehari_examples() {
        let m = Measure::lebesgue(0.0);
        for big_m in [0.5, 1.0, 3.0] {
            let r = nehari_check(&ex("y/x^4"), &m, big_m, 1.0);
            assert!(r.holds.is_holds());
            assert!((r.value - big_m / 2.0).abs() < 1e-8);
        }
        assert_eq!(nehari_check(&ex("y/x"), &m, 1.0, 1.0).holds, Verdict::Unknown);
        let step = Measure::step_at_integers(parse_sequence("1").unwrap(), 1, None).unwrap();
        let r = nehari_check(&ex("y*2^(-x)"), &step, 1.5, 0.0);
        assert!(r.holds.is_holds());
        assert!((r.value - 3.0).abs() < 1e-10);
    }

    #[test]
    fn linear_growth_examples() {
        let m = Measure::lebesgue(0.0);
        let r = linear_growth_check(&ex("y/x^4"), &m, 2.0, 1.0);
        assert!(r.holds.is_holds());
        assert!((r.value - 1.0).abs() < 1e-8);
        assert_eq!(linear_growth_check(&ex("y/x^2"), &m, 2.0, 1.0).holds, Verdict::Unknown);
        assert_eq!(linear_growth_check(&ex("0"), &m, 2.0, 1.0).value, 0.0);
    }

    #[test]
    fn x0_search() {
        let m = Measure::lebesgue(1.0);
        let x0 = find_x0(&ex("x^2/2"), &ex("1/x^5"), &ex("(1+y)/x^5"), &m, 0.5, 100.0).unwrap();
        assert!((x0 - 2.0).abs() <= 0.01, "x0 = {x0}");
        assert!(x0 >= 2.0);
        let at3 = x0_condition(&ex("x^2/2"), &ex("1/x^5"), &ex("(1+y)/x^5"), &m, 0.5, 3.0);
        assert!(at3.holds.is_holds());
        assert!((at3.value - 1.0 / 12.0).abs() < 1e-9);
        let zero = find_x0(&ex("x^2/2"), &ex("0"), &ex("0"), &m, 0.5, 100.0).unwrap();
        assert_eq!(zero, 1.0);
        assert!(matches!(
            find_x0(&ex("x^2/2"), &ex("1/x^2"), &ex("0"), &m, 0.5, 100.0),
            Err(HypothesisError::DivergentTails { .. })
        ));
    }

    #[test]
    fn x0_search_skips_singular_start() {
        let m = Measure::lebesgue(0.0);
        let x0 = find_x0(&ex("x^2/2"), &ex("1/x^5"), &ex("(1+y)/x^5"), &m, 0.5, 100.0).unwrap();
        assert!((x0 - 2.0).abs() <= 0.01);
    }

    #[test]
    fn subsuper_examples() {
        let m = Measure::lebesgue(0.0);
        let (f, big_f) = (ex("1 + 1/(6*x^2)"), ex("y/x^4"));
        let grid = GridSpec::new(1.0, 100.0, 40);
        let r = verify_subsuper(&ex("0.5"), &ex("2"), &f, &big_f, &m, &grid).unwrap();
        assert!(r.holds.is_holds());
        let r = verify_subsuper(&ex("1"), &ex("1"), &f, &big_f, &m, &grid).unwrap();
        assert!(r.holds.is_holds());
        assert!(r.value.abs() < 1e-9);
        assert!(matches!(
            verify_subsuper(&ex("2"), &ex("0.5"), &f, &big_f, &m, &grid),
            Err(HypothesisError::OrderViolated { .. })
        ));
    }

    #[test]
    fn superlinearity_examples() {
        let xs = [1.0, 2.0, 10.0];
        let pairs = [(0.5, 1.0), (1.0, 3.0), (0.1, 0.2)];
        assert!(superlinearity_check(&ex("y^3"), 2.0, &xs, &pairs).unwrap().holds.is_holds());
        assert_eq!(superlinearity_check(&ex("y"), 1.0, &xs, &pairs).unwrap().holds, Verdict::Fails);
        assert_eq!(superlinearity_check(&ex("1"), 0.0, &xs, &pairs).unwrap().holds, Verdict::Fails);
        assert!(superlinearity_check(&ex("y"), 1.0, &xs, &[(2.0, 1.0)]).is_err());
    }

    #[test]
    fn enlarging_grid_never_rescues_a_failure() {
        let f = ex("x - 3");
        let coarse = forcing_lower_bound(&f, 0.5, &GridSpec::new(1.0, 10.0, 2)).unwrap();
        let fine = forcing_lower_bound(&f, 0.5, &GridSpec::new(1.0, 10.0, 200)).unwrap();
        assert!(coarse.holds.is_holds());
        assert_eq!(fine.holds, Verdict::Fails);
    }

    #[test]
    fn lipschitz_envelope_examples() {
        let grid = GridSpec::new(3.0, 100.0, 20);
        let r = lipschitz_envelope(&ex("(1+y)/x^5"), &ex("1/x^5"), Some(&ex("x^2/2")), &grid).unwrap();
        assert!(r.holds.is_holds());
        let r = lipschitz_envelope(&ex("y^2/x^5"), &ex("1/x^5"), Some(&ex("x^2/2")), &grid).unwrap();
        assert_eq!(r.holds, Verdict::Fails);
    }

    #[test]
    fn monotone_scheme_condition() {
        let m = Measure::lebesgue(0.0);
        let r = monotone_scheme_check(&ex("y^2/x^4"), &m, 1.0, 1.0);
        assert!(r.holds.is_holds());
        assert!((r.value - 1.0 / 6.0).abs() < 1e-9);
    }
}
