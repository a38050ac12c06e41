//! Integrators σ given as atoms plus a piecewise density.
//!
//! A [`Measure`] represents a right-continuous function locally of bounded
//! variation on `[domain_start, ∞)` as the sum of a pure-step part (atoms,
//! each carrying the jump `σ(t) − σ(t−0)`) and an absolutely continuous part
//! `dσ = ρ(t) dt` on disjoint segments. Atoms count toward integrals over
//! `(a, b]` exactly when `a < t ≤ b`.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::quadrature::{self, QuadError};

/// Number of generated atoms inspected when validating a rule.
const RULE_VALIDATION_COUNT: i64 = 10_000;
/// Samples per density segment used for the sign check.
const DENSITY_SAMPLES: usize = 257;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("atom locations must be strictly increasing (index {index}: {prev} then {next})")]
    UnsortedAtoms { index: usize, prev: f64, next: f64 },
    #[error("atom at {location} lies before the domain start {start}")]
    AtomBeforeStart { location: f64, start: f64 },
    #[error("density segment [{lo}, {hi}) is empty or lies before the domain start")]
    InvalidSegment { lo: f64, hi: f64 },
    #[error("density segments overlap or are out of order at [{lo}, {hi})")]
    OverlappingDensity { lo: f64, hi: f64 },
    #[error("density expression must depend on x only: `{0}`")]
    DensityUsesY(String),
    #[error("atom rule locations accumulate near {near}; only locally finite atom sets are supported")]
    AccumulatingAtoms { near: f64 },
    #[error("atom rule has an empty index range [{start}, {end}]")]
    EmptyRule { start: i64, end: i64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub location: f64,
    pub jump: f64,
}

/// Countable atom family `n ↦ (loc(n), jump(n))` for `n` in
/// `n_start..=n_end` (unbounded when `n_end` is `None`).
#[derive(Debug, Clone)]
pub struct AtomRule {
    pub loc: Expr,
    pub jump: Expr,
    pub n_start: i64,
    pub n_end: Option<i64>,
}

impl AtomRule {
    fn atom(&self, n: i64) -> Result<Atom, EvalError> {
        let x = n as f64;
        Ok(Atom {
            location: self.loc.eval_x(x)?,
            jump: self.jump.eval_x(x)?,
        })
    }

    fn last_index(&self) -> i64 {
        self.n_end.unwrap_or(i64::MAX / 4)
    }
}

#[derive(Debug, Clone)]
pub enum AtomSet {
    Finite(Vec<Atom>),
    Rule(AtomRule),
}

impl Default for AtomSet {
    fn default() -> Self {
        AtomSet::Finite(Vec::new())
    }
}

/// Absolutely continuous piece `ρ(t) dt` on `[lo, hi)`; `hi` may be `+∞`.
#[derive(Debug, Clone)]
pub struct DensitySegment {
    pub lo: f64,
    pub hi: f64,
    pub rho: Expr,
}

impl DensitySegment {
    pub fn new(lo: f64, hi: f64, rho: Expr) -> Self {
        DensitySegment { lo, hi, rho }
    }
}

#[derive(Debug, Clone)]
pub struct Measure {
    domain_start: f64,
    atoms: AtomSet,
    density: Vec<DensitySegment>,
    nondecreasing: bool,
}

/// Validate the parts and build a [`Measure`].
pub fn measure_from_parts(
    start: f64,
    atoms: AtomSet,
    density: Vec<DensitySegment>,
) -> Result<Measure, MeasureError> {
    let mut nondecreasing = true;
    match &atoms {
        AtomSet::Finite(list) => {
            for (i, a) in list.iter().enumerate() {
                if a.location < start {
                    return Err(MeasureError::AtomBeforeStart {
                        location: a.location,
                        start,
                    });
                }
                if i > 0 && a.location <= list[i - 1].location {
                    return Err(MeasureError::UnsortedAtoms {
                        index: i,
                        prev: list[i - 1].location,
                        next: a.location,
                    });
                }
                if !a.location.is_finite() || !a.jump.is_finite() {
                    return Err(EvalError::NonFinite {
                        context: "atom".into(),
                    }
                    .into());
                }
                nondecreasing &= a.jump >= 0.0;
            }
        }
        AtomSet::Rule(rule) => {
            let end = rule.n_end.unwrap_or(rule.n_start + RULE_VALIDATION_COUNT);
            if end < rule.n_start {
                return Err(MeasureError::EmptyRule {
                    start: rule.n_start,
                    end,
                });
            }
            let end = end.min(rule.n_start + RULE_VALIDATION_COUNT);
            let mut prev: Option<Atom> = None;
            let mut prev_gap = f64::INFINITY;
            for n in rule.n_start..=end {
                let a = rule.atom(n)?;
                if a.location < start {
                    return Err(MeasureError::AtomBeforeStart {
                        location: a.location,
                        start,
                    });
                }
                if let Some(p) = prev {
                    if a.location <= p.location {
                        return Err(MeasureError::UnsortedAtoms {
                            index: (n - rule.n_start) as usize,
                            prev: p.location,
                            next: a.location,
                        });
                    }
                    let gap = a.location - p.location;
                    // a shrinking gap that falls below round-off means an accumulation point
                    if gap < prev_gap && gap <= 1e-9 * (1.0 + a.location.abs()) {
                        return Err(MeasureError::AccumulatingAtoms { near: a.location });
                    }
                    prev_gap = gap;
                }
                nondecreasing &= a.jump >= 0.0;
                prev = Some(a);
            }
            if rule.n_end.is_none() {
                check_growth(rule)?;
            }
        }
    }

    let mut last_hi = start;
    for (i, seg) in density.iter().enumerate() {
        if !(seg.lo < seg.hi) || seg.lo < start || !seg.lo.is_finite() {
            return Err(MeasureError::InvalidSegment {
                lo: seg.lo,
                hi: seg.hi,
            });
        }
        if i > 0 && seg.lo < last_hi {
            return Err(MeasureError::OverlappingDensity {
                lo: seg.lo,
                hi: seg.hi,
            });
        }
        if seg.rho.uses_y() {
            return Err(MeasureError::DensityUsesY(seg.rho.source().to_string()));
        }
        for t in validation_grid(seg.lo, seg.hi) {
            nondecreasing &= seg.rho.eval_x(t)? >= 0.0;
        }
        last_hi = seg.hi;
    }

    Ok(Measure {
        domain_start: start,
        atoms,
        density,
        nondecreasing,
    })
}

/// Flags unbounded rules whose growth per doubling of `n` decays
/// geometrically, as it does when locations converge to a finite limit.
fn check_growth(rule: &AtomRule) -> Result<(), MeasureError> {
    let k = RULE_VALIDATION_COUNT;
    let at = |n: i64| rule.atom(rule.n_start + n).map(|a| a.location);
    let (q, h, e) = (at(k / 4)?, at(k / 2)?, at(k)?);
    if e - h < 0.75 * (h - q) {
        return Err(MeasureError::AccumulatingAtoms { near: e });
    }
    Ok(())
}

fn validation_grid(lo: f64, hi: f64) -> Vec<f64> {
    let n = DENSITY_SAMPLES;
    if hi.is_finite() {
        let w = hi - lo;
        // stay inside [lo, hi)
        (0..n).map(|i| lo + w * i as f64 / n as f64).collect()
    } else {
        let s = lo.abs().max(1.0);
        (0..n)
            .map(|i| lo + s * (2f64.powf(i as f64 / 8.0) - 1.0))
            .collect()
    }
}

impl Measure {
    /// `σ(t) = t` on `[start, ∞)`.
    pub fn lebesgue(start: f64) -> Measure {
        measure_from_parts(
            start,
            AtomSet::default(),
            vec![DensitySegment::new(start, f64::INFINITY, Expr::constant(1.0))],
        )
        .expect("Lebesgue measure is valid")
    }

    /// Step integrator at the integers `n ≥ 0` whose forward solution
    /// reproduces `Δ²y_{n−1} + b_n F(n, y_n) = 0`.
    ///
    /// The jump at `n` is `+b_n`: with `y′(x) = y′(0) − ∫ F dσ` the slope
    /// change across `n` is `−b_n F(n, y_n)`, which is exactly the second
    /// difference in the recurrence.
    pub fn difference_equation(b: Expr) -> Result<Measure, MeasureError> {
        Self::step_at_integers(b, 0, None)
    }

    /// Atoms at `n = n_start..=n_end` with jump `w(n)`.
    pub fn step_at_integers(
        weight: Expr,
        n_start: i64,
        n_end: Option<i64>,
    ) -> Result<Measure, MeasureError> {
        let loc = crate::expr::parse_sequence("n").expect("static rule");
        measure_from_parts(
            n_start.min(0) as f64,
            AtomSet::Rule(AtomRule {
                loc,
                jump: weight,
                n_start,
                n_end,
            }),
            Vec::new(),
        )
    }

    pub fn domain_start(&self) -> f64 {
        self.domain_start
    }

    pub fn atoms(&self) -> &AtomSet {
        &self.atoms
    }

    pub fn density(&self) -> &[DensitySegment] {
        &self.density
    }

    /// All jumps are nonnegative and ρ ≥ 0 on the validation samples.
    pub fn is_nondecreasing(&self) -> bool {
        self.nondecreasing
    }

    pub fn has_atoms(&self) -> bool {
        match &self.atoms {
            AtomSet::Finite(v) => !v.is_empty(),
            AtomSet::Rule(_) => true,
        }
    }

    /// Visit the atoms with `a < location ≤ b` in increasing order.
    pub fn for_each_atom<E>(
        &self,
        a: f64,
        b: f64,
        mut visit: impl FnMut(Atom) -> Result<(), E>,
    ) -> Result<(), E>
    where
        E: From<EvalError>,
    {
        if !(a < b) {
            return Ok(());
        }
        match &self.atoms {
            AtomSet::Finite(list) => {
                let first = list.partition_point(|at| at.location <= a);
                for at in &list[first..] {
                    if at.location > b {
                        break;
                    }
                    visit(*at)?;
                }
            }
            AtomSet::Rule(rule) => {
                let mut n = first_index_after(rule, a)?;
                let last = rule.last_index();
                while n <= last {
                    let at = rule.atom(n)?;
                    if at.location > b {
                        break;
                    }
                    visit(at)?;
                    n += 1;
                }
            }
        }
        Ok(())
    }

    /// Atoms in `(a, b]` collected into a vector.
    pub fn atoms_in(&self, a: f64, b: f64) -> Result<Vec<Atom>, EvalError> {
        let mut out = Vec::new();
        self.for_each_atom(a, b, |at| {
            out.push(at);
            Ok::<(), EvalError>(())
        })?;
        Ok(out)
    }

    /// Locations of atoms in `(a, b]`.
    pub fn atom_locations(&self, a: f64, b: f64) -> Result<Vec<f64>, EvalError> {
        Ok(self.atoms_in(a, b)?.into_iter().map(|a| a.location).collect())
    }

    /// Density value at `t` (zero outside every segment).
    pub fn density_at(&self, t: f64) -> Result<f64, EvalError> {
        match self.segment_at(t) {
            Some(seg) => seg.rho.eval_x(t),
            None => Ok(0.0),
        }
    }

    /// Segment containing `t` in its half-open span.
    pub fn segment_at(&self, t: f64) -> Option<&DensitySegment> {
        self.density.iter().find(|s| s.lo <= t && t < s.hi)
    }

    /// Segment boundaries strictly inside `(a, b)`.
    pub fn density_breaks(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .density
            .iter()
            .flat_map(|s| [s.lo, s.hi])
            .filter(|&t| t > a && t < b)
            .collect();
        out.dedup();
        out
    }

    /// `σ(x) − σ(domain_start)`.
    pub fn sigma(&self, x: f64, tol: f64) -> Result<f64, QuadError> {
        quadrature::stieltjes_integral(|_| Ok(1.0), self, self.domain_start, x, tol)
    }
}

fn first_index_after(rule: &AtomRule, a: f64) -> Result<i64, EvalError> {
    // locations are increasing in n: gallop then bisect for the first loc > a
    let last = rule.last_index();
    if rule.atom(rule.n_start)?.location > a {
        return Ok(rule.n_start);
    }
    let mut lo = rule.n_start;
    let mut step = 1i64;
    let mut hi = loop {
        let probe = lo.saturating_add(step).min(last);
        if rule.atom(probe)?.location > a {
            break probe;
        }
        if probe == last {
            return Ok(last + 1);
        }
        lo = probe;
        step = step.saturating_mul(2);
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if rule.atom(mid)?.location > a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Total variation of σ over `(a, b]`: `Σ|jump| + ∫|ρ|`.
pub fn total_variation(m: &Measure, a: f64, b: f64) -> Result<f64, QuadError> {
    quadrature::variation_integral(|_| Ok(1.0), m, a, b, 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, parse_sequence};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn seg(lo: f64, hi: f64, rho: &str) -> DensitySegment {
        DensitySegment::new(lo, hi, parse_expr(rho).unwrap())
    }

    fn atom(location: f64, jump: f64) -> Atom {
        Atom { location, jump }
    }

    #[test]
    fn step_measure_for_difference_equation() {
        let rule = AtomRule {
            loc: parse_sequence("n").unwrap(),
            jump: parse_sequence("-1/(n+1)").unwrap(),
            n_start: 0,
            n_end: None,
        };
        let m = measure_from_parts(0.0, AtomSet::Rule(rule), vec![]).unwrap();
        assert!(!m.is_nondecreasing());
        let atoms = m.atoms_in(0.0, 3.0).unwrap();
        assert_eq!(atoms.len(), 3);
        assert_eq!(atoms[0], atom(1.0, -0.5));
        assert_eq!(atoms[2].location, 3.0);
    }

    #[test]
    fn lebesgue_case() {
        let m = measure_from_parts(0.0, AtomSet::default(), vec![seg(0.0, f64::INFINITY, "1")])
            .unwrap();
        assert!(m.is_nondecreasing());
        assert_relative_eq!(m.sigma(2.5, 1e-12).unwrap(), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn mixed_measure() {
        let p = 5;
        let rule = AtomRule {
            loc: parse_sequence("n").unwrap(),
            jump: parse_sequence("-0.25").unwrap(),
            n_start: 0,
            n_end: Some(p),
        };
        let m = measure_from_parts(0.0, AtomSet::Rule(rule), vec![seg(p as f64, f64::INFINITY, "1")])
            .unwrap();
        assert_eq!(m.atoms_in(0.0, 100.0).unwrap().len(), 5);
        assert_relative_eq!(total_variation(&m, 0.0, 7.0).unwrap(), 5.0 * 0.25 + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            measure_from_parts(0.0, AtomSet::Finite(vec![atom(2.0, 1.0), atom(1.0, 1.0)]), vec![]),
            Err(MeasureError::UnsortedAtoms { index: 1, .. })
        ));
        assert!(matches!(
            measure_from_parts(1.0, AtomSet::Finite(vec![atom(0.5, 1.0)]), vec![]),
            Err(MeasureError::AtomBeforeStart { .. })
        ));
        assert!(matches!(
            measure_from_parts(0.0, AtomSet::default(), vec![seg(0.0, 2.0, "1"), seg(1.0, 3.0, "1")]),
            Err(MeasureError::OverlappingDensity { .. })
        ));
        assert!(matches!(
            measure_from_parts(0.0, AtomSet::default(), vec![seg(2.0, 1.0, "1")]),
            Err(MeasureError::InvalidSegment { .. })
        ));
        assert!(matches!(
            measure_from_parts(0.0, AtomSet::default(), vec![seg(0.0, 1.0, "y")]),
            Err(MeasureError::DensityUsesY(_))
        ));
        let accumulating = AtomRule {
            loc: parse_sequence("1 - 1/(n+1)").unwrap(),
            jump: parse_sequence("1").unwrap(),
            n_start: 0,
            n_end: None,
        };
        assert!(matches!(
            measure_from_parts(0.0, AtomSet::Rule(accumulating), vec![]),
            Err(MeasureError::AccumulatingAtoms { .. })
        ));
    }

    #[test]
    fn total_variation_examples() {
        let m = measure_from_parts(0.0, AtomSet::default(), vec![seg(0.0, 2.0, "1")]).unwrap();
        assert_relative_eq!(total_variation(&m, 0.0, 2.0).unwrap(), 2.0, epsilon = 1e-13);

        let m = measure_from_parts(0.0, AtomSet::Finite(vec![atom(1.0, -1.0), atom(2.0, 1.0)]), vec![])
            .unwrap();
        assert_eq!(total_variation(&m, 0.0, 3.0).unwrap(), 2.0);

        // ∫₀¹ t dt + |−0.5| = 1
        let m = measure_from_parts(0.0, AtomSet::Finite(vec![atom(0.5, -0.5)]), vec![seg(0.0, 1.0, "x")])
            .unwrap();
        assert_relative_eq!(total_variation(&m, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn atoms_follow_half_open_convention() {
        let m = measure_from_parts(0.0, AtomSet::Finite(vec![atom(1.0, 1.0), atom(2.0, 1.0)]), vec![])
            .unwrap();
        assert_eq!(m.atom_locations(1.0, 2.0).unwrap(), vec![2.0]);
        assert_eq!(m.atom_locations(0.0, 1.0).unwrap(), vec![1.0]);
        assert!(m.atom_locations(2.0, 2.0).unwrap().is_empty());
    }

    #[test]
    fn rule_search_finds_far_atoms() {
        let m = Measure::step_at_integers(parse_sequence("1").unwrap(), 0, None).unwrap();
        let atoms = m.atoms_in(1_000_000.5, 1_000_003.0).unwrap();
        let locs: Vec<f64> = atoms.iter().map(|a| a.location).collect();
        assert_eq!(locs, vec![1_000_001.0, 1_000_002.0, 1_000_003.0]);
        let bounded = Measure::step_at_integers(parse_sequence("1").unwrap(), 0, Some(4)).unwrap();
        assert!(bounded.atoms_in(4.0, 100.0).unwrap().is_empty());
        assert_eq!(bounded.atoms_in(3.5, 100.0).unwrap().len(), 1);
    }

    #[test]
    fn pure_step_sigma_is_constant_between_atoms() {
        let m = Measure::step_at_integers(parse_sequence("1/(n+1)").unwrap(), 0, None).unwrap();
        for n in 0..6 {
            let base = m.sigma(n as f64, 1e-12).unwrap();
            for frac in [0.1, 0.5, 0.99] {
                assert_eq!(m.sigma(n as f64 + frac, 1e-12).unwrap(), base);
            }
        }
    }

    proptest! {
        #[test]
        fn total_variation_is_additive(a in 0.0f64..3.0, d1 in 0.0f64..3.0, d2 in 0.0f64..3.0) {
            let m = measure_from_parts(
                0.0,
                AtomSet::Finite(vec![atom(0.5, -0.3), atom(1.5, 0.7), atom(4.0, -1.1)]),
                vec![seg(0.0, 2.0, "sin(3*x)"), seg(2.0, f64::INFINITY, "1/(1+x^2)")],
            ).unwrap();
            let (b, c) = (a + d1, a + d1 + d2);
            let whole = total_variation(&m, a, c).unwrap();
            let parts = total_variation(&m, a, b).unwrap() + total_variation(&m, b, c).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.abs().max(1.0), "diff {}", whole - parts);
        }
    }
}
