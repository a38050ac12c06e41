//! Python bindings: measures, problems, the forward and fixed-point solvers,
//! the recurrence tools, hypothesis checks and classification.
//!
//! Reports come back as plain dicts (serialized through `json`).

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use vsie::asymptotics;
use vsie::expr::{parse_expr, parse_sequence, Expr};
use vsie::fixedpoint::{self, FixedPointError, PicardOptions, Start};
use vsie::hypotheses;
use vsie::ivp::{self, StepControl};
use vsie::measure::{self as msr, Atom, AtomRule, AtomSet, DensitySegment};
use vsie::problem;
use vsie::quadrature::{self, Integrator};

fn expr(text: &str) -> PyResult<Expr> {
    parse_expr(text).map_err(|e| PyValueError::new_err(format!("{text:?}: {e}")))
}

fn sequence(text: &str) -> PyResult<Expr> {
    parse_sequence(text).map_err(|e| PyValueError::new_err(format!("{text:?}: {e}")))
}

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Integrator σ: atoms plus a piecewise density.
#[pyclass(name = "Measure", frozen)]
struct PyMeasure {
    inner: Arc<msr::Measure>,
}

#[pymethods]
impl PyMeasure {
    /// `atoms` is a list of `(location, jump)`, `density` a list of
    /// `(lo, hi, rho)` with `rho` an expression in `x`.
    #[new]
    #[pyo3(signature = (start, atoms=Vec::new(), density=Vec::new()))]
    fn new(start: f64, atoms: Vec<(f64, f64)>, density: Vec<(f64, f64, String)>) -> PyResult<Self> {
        let atoms = AtomSet::Finite(atoms.into_iter().map(|(location, jump)| Atom { location, jump }).collect());
        let density = density
            .into_iter()
            .map(|(lo, hi, rho)| Ok(DensitySegment::new(lo, hi, expr(&rho)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let m = msr::measure_from_parts(start, atoms, density).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyMeasure { inner: Arc::new(m) })
    }

    #[staticmethod]
    fn lebesgue(start: f64) -> Self {
        PyMeasure {
            inner: Arc::new(msr::Measure::lebesgue(start)),
        }
    }

    /// Atoms at `n = 0, 1, ...` with jump `b(n)`.
    #[staticmethod]
    fn difference_equation(b: &str) -> PyResult<Self> {
        let m = msr::Measure::difference_equation(sequence(b)?).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyMeasure { inner: Arc::new(m) })
    }

    /// Atoms at `loc(n)` with jump `jump(n)` for `n_start <= n <= n_end`.
    #[staticmethod]
    #[pyo3(signature = (start, loc, jump, n_start=0, n_end=None))]
    fn atom_rule(start: f64, loc: &str, jump: &str, n_start: i64, n_end: Option<i64>) -> PyResult<Self> {
        let rule = AtomRule {
            loc: sequence(loc)?,
            jump: sequence(jump)?,
            n_start,
            n_end,
        };
        let m = msr::measure_from_parts(start, AtomSet::Rule(rule), Vec::new()).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyMeasure { inner: Arc::new(m) })
    }

    #[getter]
    fn domain_start(&self) -> f64 {
        self.inner.domain_start()
    }

    fn total_variation(&self, a: f64, b: f64) -> PyResult<f64> {
        msr::total_variation(&self.inner, a, b).map_err(runtime)
    }

    #[pyo3(signature = (x, tol=1e-12))]
    fn sigma(&self, x: f64, tol: f64) -> PyResult<f64> {
        self.inner.sigma(x, tol).map_err(runtime)
    }

    /// `∫_(a,b] g dσ` for `g` an expression in `x`.
    #[pyo3(signature = (g, a, b, tol=1e-10, variation=false))]
    fn integrate(&self, g: &str, a: f64, b: f64, tol: f64, variation: bool) -> PyResult<f64> {
        let g = expr(g)?;
        let mode = if variation { Integrator::Variation } else { Integrator::Signed };
        quadrature::integrate(|t| g.eval_x(t), &self.inner, a, b, tol, mode).map_err(runtime)
    }

    /// `∫_(a,∞) g dσ` as a dict with `converged`, `value` and diagnostics.
    #[pyo3(signature = (g, a, tol=1e-10))]
    fn tail_integral<'py>(&self, py: Python<'py>, g: &str, a: f64, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        let g = expr(g)?;
        let r = quadrature::tail_integral(|t| g.eval_x(t), &self.inner, a, tol, quadrature::DEFAULT_TAIL_BUDGET).map_err(runtime)?;
        to_py(py, &r)
    }
}

#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: problem::Problem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (nonlinearity, measure, k=None, f=None, delta=None))]
    fn new(nonlinearity: &str, measure: &PyMeasure, k: Option<&str>, f: Option<&str>, delta: Option<f64>) -> PyResult<Self> {
        Ok(PyProblem {
            inner: problem::Problem {
                nonlinearity: expr(nonlinearity)?,
                lipschitz: k.map(expr).transpose()?,
                forcing: f.map(expr).transpose()?,
                delta,
                measure: measure.inner.clone(),
            },
        })
    }

    #[getter]
    fn domain_start(&self) -> f64 {
        self.inner.domain_start()
    }
}

/// Sampled solution with `grid`, `y` and right derivative `yprime`.
#[pyclass(name = "Solution", frozen)]
struct PySolution {
    inner: ivp::Solution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn yprime(&self) -> Vec<f64> {
        self.inner.yprime_right.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Interpolated value; `None` outside the grid.
    fn __call__(&self, x: f64) -> Option<f64> {
        self.inner.eval(x)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// End-behaviour classification of the trailing `window` share of the grid.
    #[pyo3(signature = (f=None, window=asymptotics::DEFAULT_WINDOW))]
    fn classify<'py>(&self, py: Python<'py>, f: Option<&str>, window: f64) -> PyResult<Bound<'py, PyAny>> {
        let f = f.map(expr).transpose()?;
        let c = asymptotics::classify(&self.inner, f.as_ref(), window).map_err(|e| PyValueError::new_err(e.to_string()))?;
        to_py(py, &c)
    }

    fn sign_changes(&self, a: f64, b: f64) -> usize {
        asymptotics::count_sign_changes(&self.inner, a, b)
    }

    /// `[(x, E)]` for `E = ½y′² + ∫₀^y η G(x, η) dη`.
    #[pyo3(signature = (big_g, g="0"))]
    fn energy(&self, big_g: &str, g: &str) -> PyResult<Vec<(f64, f64)>> {
        let points = asymptotics::energy_profile(&self.inner, &expr(big_g)?, &expr(g)?).map_err(runtime)?;
        Ok(points.into_iter().map(|p| (p.x, p.energy)).collect())
    }
}

#[pyfunction]
#[pyo3(signature = (text, x, y=None))]
fn eval_expr(text: &str, x: f64, y: Option<f64>) -> PyResult<f64> {
    expr(text)?.eval_opt(x, y).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (problem, y0, yp0, a, b, rtol=None, atol=None, max_step=None))]
#[allow(clippy::too_many_arguments)]
fn solve_ivp(
    problem: &PyProblem,
    y0: f64,
    yp0: f64,
    a: f64,
    b: f64,
    rtol: Option<f64>,
    atol: Option<f64>,
    max_step: Option<f64>,
) -> PyResult<PySolution> {
    let d = StepControl::default();
    let ctrl = StepControl {
        rtol: rtol.unwrap_or(d.rtol),
        atol: atol.unwrap_or(d.atol),
        max_step: max_step.unwrap_or(d.max_step),
        ..d
    };
    let inner = ivp::solve_ivp(&problem.inner, y0, yp0, a, b, &ctrl).map_err(runtime)?;
    Ok(PySolution { inner })
}

/// Returns `(solution, report)`. `start` is a number, an expression, or
/// `None` for the forcing term.
#[pyfunction]
#[pyo3(signature = (problem, start=None, x0=None, tol=None, horizon=None, max_iter=None))]
fn picard_solve<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    start: Option<Bound<'py, PyAny>>,
    x0: Option<f64>,
    tol: Option<f64>,
    horizon: Option<f64>,
    max_iter: Option<usize>,
) -> PyResult<(PySolution, Bound<'py, PyAny>)> {
    let p = &problem.inner;
    let f = p.forcing.as_ref().ok_or_else(|| PyValueError::new_err("problem has no forcing term f"))?;
    let start = match start {
        None => Start::Forcing,
        Some(s) => match s.extract::<f64>() {
            Ok(c) => Start::Constant(c),
            Err(_) => Start::Function(expr(&s.extract::<String>()?)?),
        },
    };
    let d = PicardOptions::default();
    let opts = PicardOptions {
        tol: tol.unwrap_or(d.tol),
        horizon: horizon.unwrap_or(d.horizon),
        max_iter: max_iter.unwrap_or(d.max_iter),
        ..d
    };
    match fixedpoint::picard_solve(p, f, &start, x0.unwrap_or(p.domain_start()), &opts) {
        Ok((inner, report)) => Ok((PySolution { inner }, to_py(py, &report)?)),
        Err(FixedPointError::Diverged(r)) => Err(PyRuntimeError::new_err(format!(
            "iteration diverged after {} iterations",
            r.iterations
        ))),
        Err(e) => Err(runtime(e)),
    }
}

#[pyfunction]
fn solve_recurrence(nonlinearity: &str, b: &str, y0: f64, y1: f64, n_max: usize) -> PyResult<Vec<f64>> {
    ivp::solve_recurrence(&expr(nonlinearity)?, &sequence(b)?, y0, y1, n_max).map_err(runtime)
}

/// `(alpha, beta)` for `c_n y_{n+1} + c_{n−1} y_{n−1} + b_n y_n = 0`.
#[pyfunction]
fn three_term_normalize(c: &str, b: &str, alpha0: f64, alpha1: f64, n_max: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let n = ivp::three_term_normalize(&sequence(c)?, &sequence(b)?, alpha0, alpha1, n_max).map_err(runtime)?;
    Ok((n.alpha, n.beta))
}

#[pyfunction]
fn check_contraction<'py>(py: Python<'py>, k: &str, measure: &PyMeasure, x0: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &hypotheses::check_contraction(&expr(k)?, &measure.inner, x0))
}

#[pyfunction]
fn nehari_check<'py>(py: Python<'py>, nonlinearity: &str, measure: &PyMeasure, big_m: f64, x0: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &hypotheses::nehari_check(&expr(nonlinearity)?, &measure.inner, big_m, x0))
}

#[pyfunction]
fn linear_growth_check<'py>(py: Python<'py>, nonlinearity: &str, measure: &PyMeasure, big_m: f64, x0: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &hypotheses::linear_growth_check(&expr(nonlinearity)?, &measure.inner, big_m, x0))
}

#[pyfunction]
#[pyo3(signature = (f, k, nonlinearity, measure, delta, search_hi=1e4))]
fn find_x0(f: &str, k: &str, nonlinearity: &str, measure: &PyMeasure, delta: f64, search_hi: f64) -> PyResult<f64> {
    hypotheses::find_x0(&expr(f)?, &expr(k)?, &expr(nonlinearity)?, &measure.inner, delta, search_hi).map_err(runtime)
}

#[pymodule]
fn vsie_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMeasure>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(eval_expr, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ivp, m)?)?;
    m.add_function(wrap_pyfunction!(picard_solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_recurrence, m)?)?;
    m.add_function(wrap_pyfunction!(three_term_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(check_contraction, m)?)?;
    m.add_function(wrap_pyfunction!(nehari_check, m)?)?;
    m.add_function(wrap_pyfunction!(linear_growth_check, m)?)?;
    m.add_function(wrap_pyfunction!(find_x0, m)?)?;
    Ok(())
}
