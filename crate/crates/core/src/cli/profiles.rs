//! Theorem profiles: named bundles of hypothesis checks.

use crate::expr::Expr;
use crate::hypotheses::{
    check_contraction, find_x0, forcing_lower_bound, linear_growth_check, lipschitz_envelope, monotone_scheme_check,
    nehari_check, superlinearity_check, tail_condition, verify_subsuper, x0_condition, GridSpec, HypothesisError,
    HypothesisReport, Verdict,
};
use crate::quadrature::Integrator;

use super::problem_file::{Diagnostic, ProblemFile};

const DEFAULT_SEARCH_HI: f64 = 1e4;
const DEFAULT_GRID_HI: f64 = 1e3;
const DEFAULT_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Every check whose inputs are present in the file.
    Auto,
    /// Forced equation asymptotic to the double primitive `f`.
    ForcedAsymptotics,
    Nehari,
    LinearGrowth,
}

impl Profile {
    pub fn parse(name: &str) -> Option<Profile> {
        Some(match name {
            "auto" => Profile::Auto,
            "thm-2.4" | "forced-asymptotics" => Profile::ForcedAsymptotics,
            "thm-4.8" | "nehari" => Profile::Nehari,
            "thm-4.2" | "linear-growth" => Profile::LinearGrowth,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Auto => "auto",
            Profile::ForcedAsymptotics => "thm-2.4",
            Profile::Nehari => "thm-4.8",
            Profile::LinearGrowth => "thm-4.2",
        }
    }
}

fn check_x0(pf: &ProblemFile) -> f64 {
    pf.theorem.x0.or(pf.solver.x0).unwrap_or(pf.problem.domain_start())
}

fn sample_grid(pf: &ProblemFile, lo: f64) -> GridSpec {
    let hi = pf.theorem.grid_hi.unwrap_or(DEFAULT_GRID_HI.max(10.0 * lo.abs()));
    GridSpec::new(lo, hi, pf.theorem.grid_points.unwrap_or(DEFAULT_GRID_POINTS))
}

/// A sampling failure becomes an `Unknown` verdict rather than aborting the run.
fn sampled(name: &str, r: Result<HypothesisReport, HypothesisError>) -> HypothesisReport {
    r.unwrap_or_else(|e| HypothesisReport::new(name, Verdict::Unknown, f64::NAN, f64::NAN).with_notes(e.to_string()))
}

/// The forcing-term hypothesis set: `|f| ≥ δ`, the two first-moment tails,
/// the sampled Lipschitz envelope and the x0 condition.
fn forced_set(pf: &ProblemFile, f: &Expr, k: &Expr, delta: f64) -> Vec<HypothesisReport> {
    let p = &pf.problem;
    let m = &*p.measure;
    let big_f = &p.nonlinearity;
    let search_hi = pf.theorem.search_hi.unwrap_or(DEFAULT_SEARCH_HI);
    let found = find_x0(f, k, big_f, m, delta, search_hi);
    let given = pf.theorem.x0.or(pf.solver.x0);
    let x0 = match (&found, given) {
        (_, Some(x)) => x,
        (Ok(x), None) => *x,
        (Err(_), None) => p.domain_start(),
    };
    let grid = sample_grid(pf, x0);

    let mut x0_report = x0_condition(f, k, big_f, m, delta, x0);
    x0_report.name = "x0".into();
    let cond = x0_report.value;
    x0_report.threshold = x0;
    match &found {
        Ok(x) => {
            x0_report.value = *x;
            x0_report.notes = format!("smallest admissible x0 ~ {x}; condition value {cond:e} vs delta/4 = {} at x0 = {x0}", delta / 4.0);
        }
        Err(e) => {
            x0_report.value = f64::NAN;
            if matches!(e, HypothesisError::NoAdmissibleX0 { .. }) && x0_report.holds == Verdict::Unknown {
                x0_report.holds = Verdict::Fails;
            }
            x0_report.notes = format!("x0 search: {e}");
        }
    }

    vec![
        sampled("forcing_lower_bound", forcing_lower_bound(f, delta, &grid)),
        tail_condition(
            "zero_response_moment",
            |s| Ok(s * big_f.eval(s, 0.0)?.abs()),
            m,
            x0,
            f64::INFINITY,
            true,
            Integrator::Variation,
        ),
        tail_condition(
            "forcing_moment",
            |s| Ok(s * f.eval_x(s)?.abs() * k.eval_x(s)?),
            m,
            x0,
            f64::INFINITY,
            true,
            Integrator::Variation,
        ),
        sampled("lipschitz_envelope", lipschitz_envelope(big_f, k, Some(f), &grid)),
        x0_report,
    ]
}

fn need<T: Copy>(pf: &ProblemFile, section: &str, key: &str, v: Option<T>, profile: Profile) -> Result<T, Diagnostic> {
    pf.require(section, key, v, &format!("profile {}", profile.name()))
}

/// Run the checks of `profile` against the problem file.
pub fn run_profile(profile: Profile, pf: &ProblemFile) -> Result<Vec<HypothesisReport>, Diagnostic> {
    let p = &pf.problem;
    let m = &*p.measure;
    let big_f = &p.nonlinearity;
    let x0 = check_x0(pf);
    match profile {
        Profile::ForcedAsymptotics => {
            let cmd = format!("profile {}", profile.name());
            let f = pf.require_expr("problem", "f", p.forcing.as_ref(), &cmd)?;
            let k = pf.require_expr("problem", "k", p.lipschitz.as_ref(), &cmd)?;
            let delta = need(pf, "problem", "delta", p.delta, profile)?;
            Ok(forced_set(pf, f, k, delta))
        }
        Profile::Nehari => {
            let big_m = need(pf, "theorem", "M", pf.theorem.big_m, profile)?;
            if !(big_m > 0.0) {
                return Err(pf.error_in("theorem", format!("profile thm-4.8 needs M > 0, got {big_m}")));
            }
            Ok(vec![nehari_check(big_f, m, big_m, x0)])
        }
        Profile::LinearGrowth => {
            let big_m = need(pf, "theorem", "M", pf.theorem.big_m, profile)?;
            if !(big_m > 1.0) {
                return Err(pf.error_in("theorem", format!("profile thm-4.2 needs M > 1, got {big_m}")));
            }
            Ok(vec![linear_growth_check(big_f, m, big_m, x0)])
        }
        Profile::Auto => {
            let mut out = Vec::new();
            if let Some(k) = &p.lipschitz {
                out.push(check_contraction(k, m, x0));
            }
            if let (Some(f), Some(k), Some(delta)) = (&p.forcing, &p.lipschitz, p.delta) {
                out.extend(forced_set(pf, f, k, delta));
            }
            if let Some(big_m) = pf.theorem.big_m {
                out.push(nehari_check(big_f, m, big_m, x0));
                out.push(linear_growth_check(big_f, m, big_m, x0));
            }
            if let Some(a) = pf.theorem.big_a {
                out.push(monotone_scheme_check(big_f, m, a, x0));
            }
            if let Some(eps) = pf.theorem.eps {
                let xs = GridSpec::new(x0, sample_grid(pf, x0).hi, 20).points();
                let levels: Vec<f64> = (0..9).map(|i| 10f64.powf(-2.0 + 0.5 * i as f64)).collect();
                let pairs: Vec<(f64, f64)> = levels.windows(2).map(|w| (w[0], w[1])).collect();
                out.push(sampled("superlinearity", superlinearity_check(big_f, eps, &xs, &pairs)));
            }
            if let (Some(u), Some(v), Some(f)) = (&pf.theorem.u, &pf.theorem.v, &p.forcing) {
                let grid = GridSpec::new(x0, sample_grid(pf, x0).hi, 40);
                out.push(sampled("subsuper", verify_subsuper(u, v, f, big_f, m, &grid)));
            }
            if out.is_empty() {
                return Err(pf.error_in(
                    "theorem",
                    "nothing to check: give k, f with k and delta, or M, A, eps, u and v in [theorem]",
                ));
            }
            Ok(out)
        }
    }
}
