//! Problem files: TOML with `[problem]`, `[measure]`, `[solver]` and
//! `[theorem]` tables. Every expression is parsed before anything runs, and
//! errors point at the offending line and column.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use toml::Spanned;

use crate::expr::{parse_expr, parse_sequence, Expr};
use crate::measure::{measure_from_parts, Atom, AtomRule, AtomSet, DensitySegment, Measure};
use crate::problem::Problem;

/// An input problem with a position in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub line: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some((line, col)) => write!(f, "{}:{line}:{col}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    problem: RawProblem,
    #[serde(default)]
    measure: RawMeasure,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    theorem: RawTheorem,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(rename = "F")]
    big_f: Spanned<String>,
    k: Option<Spanned<String>>,
    f: Option<Spanned<String>>,
    delta: Option<f64>,
    #[serde(default)]
    domain_start: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    atoms: Option<RawRule>,
    atom_list: Option<Vec<RawAtom>>,
    density: Option<Vec<RawDensity>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    loc: Spanned<String>,
    jump: Spanned<String>,
    #[serde(default)]
    n_start: i64,
    n_end: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtom {
    at: f64,
    jump: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDensity {
    lo: f64,
    hi: f64,
    rho: Spanned<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    mode: Option<Spanned<String>>,
    y0: Option<f64>,
    yp0: Option<f64>,
    y1: Option<f64>,
    x_start: Option<f64>,
    x_end: Option<f64>,
    rtol: Option<f64>,
    atol: Option<f64>,
    max_step: Option<f64>,
    x0: Option<f64>,
    initial: Option<Spanned<String>>,
    tol: Option<f64>,
    quad_tol: Option<f64>,
    tail_tol: Option<f64>,
    horizon: Option<f64>,
    max_iter: Option<usize>,
    #[serde(rename = "N")]
    n: Option<usize>,
    b: Option<Spanned<String>>,
    c: Option<Spanned<String>>,
    alpha0: Option<f64>,
    alpha1: Option<f64>,
    window: Option<f64>,
    #[serde(rename = "G")]
    big_g: Option<Spanned<String>>,
    g: Option<Spanned<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTheorem {
    profile: Option<String>,
    #[serde(rename = "M")]
    big_m: Option<f64>,
    eps: Option<f64>,
    #[serde(rename = "A")]
    big_a: Option<f64>,
    x0: Option<f64>,
    u: Option<Spanned<String>>,
    v: Option<Spanned<String>>,
    search_hi: Option<f64>,
    grid_hi: Option<f64>,
    grid_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ivp,
    Fixpoint,
    Check,
    Classify,
    Discrete,
}

impl Mode {
    fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "ivp" => Mode::Ivp,
            "fixpoint" => Mode::Fixpoint,
            "check" => Mode::Check,
            "classify" => Mode::Classify,
            "discrete" => Mode::Discrete,
            _ => return None,
        })
    }
}

/// `[solver]` after parsing.
#[derive(Debug, Clone, Default)]
pub struct SolverSection {
    pub mode: Option<Mode>,
    pub y0: Option<f64>,
    pub yp0: Option<f64>,
    pub y1: Option<f64>,
    pub x_start: Option<f64>,
    pub x_end: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub max_step: Option<f64>,
    pub x0: Option<f64>,
    /// `None` means start from the forcing term.
    pub initial: Option<Expr>,
    pub tol: Option<f64>,
    pub quad_tol: Option<f64>,
    pub tail_tol: Option<f64>,
    pub horizon: Option<f64>,
    pub max_iter: Option<usize>,
    pub n: Option<usize>,
    pub b: Option<Expr>,
    pub c: Option<Expr>,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub window: Option<f64>,
    pub big_g: Option<Expr>,
    pub g: Option<Expr>,
}

/// `[theorem]` after parsing.
#[derive(Debug, Clone, Default)]
pub struct TheoremSection {
    pub profile: Option<String>,
    pub big_m: Option<f64>,
    pub eps: Option<f64>,
    pub big_a: Option<f64>,
    pub x0: Option<f64>,
    pub u: Option<Expr>,
    pub v: Option<Expr>,
    pub search_hi: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub path: PathBuf,
    pub problem: Problem,
    pub solver: SolverSection,
    pub theorem: TheoremSection,
    text: String,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, col)
}

struct Ctx<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Ctx<'_> {
    fn at(&self, offset: usize, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            path: self.path.to_path_buf(),
            line: Some(line_col(self.text, offset)),
            message: message.into(),
        }
    }

    fn expr(&self, key: &str, s: &Spanned<String>, sequence: bool) -> Result<Expr, Diagnostic> {
        let parsed = if sequence { parse_sequence(s.get_ref()) } else { parse_expr(s.get_ref()) };
        // the span covers the opening quote
        parsed.map_err(|e| self.at(s.span().start + 1 + e.offset(), format!("in `{key}`: {e}")))
    }

    fn opt_expr(&self, key: &str, s: &Option<Spanned<String>>, sequence: bool) -> Result<Option<Expr>, Diagnostic> {
        s.as_ref().map(|s| self.expr(key, s, sequence)).transpose()
    }
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<ProblemFile, Diagnostic> {
        let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
            path: path.to_path_buf(),
            line: None,
            message: if e.kind() == std::io::ErrorKind::NotFound {
                "file not found".to_string()
            } else {
                e.to_string()
            },
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<ProblemFile, Diagnostic> {
        let cx = Ctx { path, text };
        let raw: RawFile = toml::from_str(text).map_err(|e| {
            let offset = e.span().map_or(0, |s: Range<usize>| s.start);
            cx.at(offset, e.message().to_string())
        })?;

        let p = &raw.problem;
        let big_f = cx.expr("F", &p.big_f, false)?;
        let k = cx.opt_expr("k", &p.k, false)?;
        let f = cx.opt_expr("f", &p.f, false)?;

        let m = &raw.measure;
        let atoms = match (&m.atoms, &m.atom_list) {
            (Some(_), Some(_)) => {
                return Err(cx.at(cx.section("measure"), "give either `atoms` or `atom_list`, not both"));
            }
            (Some(r), None) => AtomSet::Rule(AtomRule {
                loc: cx.expr("atoms.loc", &r.loc, true)?,
                jump: cx.expr("atoms.jump", &r.jump, true)?,
                n_start: r.n_start,
                n_end: r.n_end,
            }),
            (None, Some(list)) => AtomSet::Finite(list.iter().map(|a| Atom { location: a.at, jump: a.jump }).collect()),
            (None, None) => AtomSet::default(),
        };
        let density = m
            .density
            .iter()
            .flatten()
            .map(|d| Ok(DensitySegment::new(d.lo, d.hi, cx.expr("density.rho", &d.rho, false)?)))
            .collect::<Result<Vec<_>, Diagnostic>>()?;

        let s = &raw.solver;
        let mode = match &s.mode {
            Some(name) => Some(Mode::parse(name.get_ref()).ok_or_else(|| {
                cx.at(
                    name.span().start,
                    format!("unknown mode `{}` (expected ivp, fixpoint, check, classify or discrete)", name.get_ref()),
                )
            })?),
            None => None,
        };
        let initial = match &s.initial {
            Some(e) if e.get_ref().trim() == "f" => None,
            other => cx.opt_expr("initial", other, false)?,
        };
        let solver = SolverSection {
            mode,
            y0: s.y0,
            yp0: s.yp0,
            y1: s.y1,
            x_start: s.x_start,
            x_end: s.x_end,
            rtol: s.rtol,
            atol: s.atol,
            max_step: s.max_step,
            x0: s.x0,
            initial,
            tol: s.tol,
            quad_tol: s.quad_tol,
            tail_tol: s.tail_tol,
            horizon: s.horizon,
            max_iter: s.max_iter,
            n: s.n,
            b: cx.opt_expr("b", &s.b, true)?,
            c: cx.opt_expr("c", &s.c, true)?,
            alpha0: s.alpha0,
            alpha1: s.alpha1,
            window: s.window,
            big_g: cx.opt_expr("G", &s.big_g, false)?,
            g: cx.opt_expr("g", &s.g, false)?,
        };

        let t = &raw.theorem;
        let theorem = TheoremSection {
            profile: t.profile.clone(),
            big_m: t.big_m,
            eps: t.eps,
            big_a: t.big_a,
            x0: t.x0,
            u: cx.opt_expr("u", &t.u, false)?,
            v: cx.opt_expr("v", &t.v, false)?,
            search_hi: t.search_hi,
            grid_hi: t.grid_hi,
            grid_points: t.grid_points,
        };

        let measure = if matches!(&atoms, AtomSet::Finite(a) if a.is_empty()) && density.is_empty() {
            Measure::lebesgue(p.domain_start)
        } else {
            measure_from_parts(p.domain_start, atoms, density).map_err(|e| cx.at(cx.section("measure"), e.to_string()))?
        };
        let problem = Problem {
            nonlinearity: big_f,
            lipschitz: k,
            forcing: f,
            delta: p.delta,
            measure: Arc::new(measure),
        };
        if let Some(d) = problem.delta {
            if !(d > 0.0) {
                return Err(cx.at(cx.section("problem"), format!("delta must be positive, got {d}")));
            }
        }

        Ok(ProblemFile {
            path: path.to_path_buf(),
            problem,
            solver,
            theorem,
            text: text.to_string(),
        })
    }

    /// Error positioned at a `[section]` header (line 1 when absent).
    pub fn error_in(&self, section: &str, message: impl Into<String>) -> Diagnostic {
        let cx = Ctx {
            path: &self.path,
            text: &self.text,
        };
        cx.at(cx.section(section), message)
    }

    /// Complain unless `value` is present.
    pub fn require<T: Copy>(&self, section: &str, key: &str, value: Option<T>, command: &str) -> Result<T, Diagnostic> {
        value.ok_or_else(|| self.error_in(section, format!("`{key}` in [{section}] is required for `{command}`")))
    }

    pub fn require_expr<'a>(&self, section: &str, key: &str, value: Option<&'a Expr>, command: &str) -> Result<&'a Expr, Diagnostic> {
        value.ok_or_else(|| self.error_in(section, format!("`{key}` in [{section}] is required for `{command}`")))
    }
}

impl Ctx<'_> {
    fn section(&self, name: &str) -> usize {
        let header = format!("[{name}]");
        let mut offset = 0;
        for line in self.text.split_inclusive('\n') {
            if line.trim() == header {
                return offset;
            }
            offset += line.len();
        }
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ProblemFile, Diagnostic> {
        ProblemFile::parse(Path::new("t.prob"), text)
    }

    #[test]
    fn minimal_file() {
        let pf = parse("[problem]\nF = \"y/x^4\"\nf = \"1 + 1/(6*x^2)\"\ndomain_start = 1\n").unwrap();
        assert!(pf.problem.forcing.is_some());
        assert_eq!(pf.problem.domain_start(), 1.0);
        assert!(!pf.problem.measure.has_atoms());
    }

    #[test]
    fn expression_error_points_into_string() {
        let err = parse("[problem]\nF = \"y +* 2\"\n").unwrap_err();
        let (line, col) = err.line.unwrap();
        assert_eq!(line, 2);
        assert!(col >= 6, "{err}");
    }

    #[test]
    fn toml_error_has_position() {
        let err = parse("[problem]\nF = \"y\"\nbogus = 3\n").unwrap_err();
        assert_eq!(err.line.unwrap().0, 3);
    }

    #[test]
    fn atom_rule_and_density() {
        let pf = parse(
            "[problem]\nF = \"y\"\n[measure]\natoms = { loc = \"n\", jump = \"1/(n+1)^2\", n_start = 1, n_end = 20 }\n\
             density = [{ lo = 0, hi = inf, rho = \"exp(-x)\" }]\n",
        )
        .unwrap();
        assert!(pf.problem.measure.has_atoms());
        assert_eq!(pf.problem.measure.density().len(), 1);
    }

    #[test]
    fn unknown_mode_and_bad_delta() {
        let err = parse("[problem]\nF = \"y\"\n[solver]\nmode = \"shoot\"\n").unwrap_err();
        assert_eq!(err.line.unwrap().0, 4);
        assert!(parse("[problem]\nF = \"y\"\ndelta = -1\n").is_err());
    }

    #[test]
    fn missing_required_key() {
        let pf = parse("[problem]\nF = \"y\"\n[solver]\ny0 = 1\n").unwrap();
        let err = pf.require("solver", "yp0", pf.solver.yp0, "solve").unwrap_err();
        assert_eq!(err.line, Some((3, 1)));
        assert!(err.message.contains("yp0"));
    }
}
