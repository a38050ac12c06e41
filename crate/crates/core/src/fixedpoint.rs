//! Picard iteration for `Ty(x) = f(x) − ∫_(x,∞) (s − x) F(s, y(s)) dσ(s)`.
//!
//! Iterates live on a shared grid over `[x0, H]` (log-like spacing plus every
//! atom and density break). Beyond the horizon `H` an iterate is replaced by
//! a model expression: the start function for the first application and `f`
//! afterwards. The error that this introduces is bounded separately and
//! reported as `tail_bound`.
//!
//! On the grid, with `h(s) = F(s, y(s))`, `P(x) = ∫_(x,∞) h dσ` and
//! `I(x) = ∫_(x,∞) (s − x) h dσ` are accumulated backwards from `H`:
//! `P(xᵢ) = pᵢ + P(xᵢ₊₁)`, `I(xᵢ) = qᵢ + I(xᵢ₊₁) + (xᵢ₊₁ − xᵢ)P(xᵢ₊₁)` where
//! `pᵢ, qᵢ` are the cell integrals of `h` and `(s − xᵢ)h`.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::ivp::{Method, Solution};
use crate::measure::Measure;
use crate::problem::Problem;
use crate::quadrature::{self, Integrator, QuadError, DEFAULT_TAIL_BUDGET};

#[derive(Debug, Clone, Error)]
pub enum FixedPointError {
    #[error("iteration diverged: successive differences grew for 3 consecutive iterations")]
    Diverged(Box<IterationReport>),
    #[error("tail bound {bound:e} beyond the horizon exceeds the tolerance {tol:e}")]
    TailBound { bound: f64, tol: f64 },
    #[error("tail integral beyond the horizon {horizon} did not converge")]
    TailDiverged { horizon: f64 },
    #[error("x0 = {x0} must satisfy domain start {start} <= x0 < horizon {horizon}")]
    BadDomain { x0: f64, start: f64, horizon: f64 },
    #[error("grid would need more than {0} nodes")]
    GridTooLarge(usize),
    #[error("iterate became non-finite at x = {x}")]
    NonFinite { x: f64 },
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Where the iteration starts.
#[derive(Debug, Clone)]
pub enum Start {
    Constant(f64),
    /// The forcing term `f`.
    Forcing,
    Function(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardOptions {
    pub horizon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Absolute tolerance for the integrals of one application.
    pub quad_tol: f64,
    /// Largest acceptable bound on the error from truncating at the horizon.
    pub tail_tol: f64,
    pub initial_nodes: usize,
    /// Midpoint interpolation error that triggers grid refinement.
    pub interp_tol: f64,
    pub max_nodes: usize,
    pub record_iterates: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            horizon: 1000.0,
            tol: 1e-10,
            max_iter: 100,
            quad_tol: 1e-12,
            tail_tol: 1e-6,
            initial_nodes: 400,
            interp_tol: 1e-11,
            max_nodes: 20_000,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    pub iterations: usize,
    pub sup_deltas: Vec<f64>,
    pub contraction_ratio: Option<f64>,
    pub converged: bool,
    pub horizon: f64,
    pub tail_bound: f64,
    /// Norm weighted by `1/|f|`.
    pub weighted: bool,
    pub nodes: usize,
    /// Some application hit the node cap before its interpolation check passed.
    pub grid_capped: bool,
    #[serde(skip)]
    pub iterates: Vec<GridFunction>,
}

/// Values on a node set with piecewise cubic interpolation that never
/// crosses an atom or density break, and a model expression past the end.
#[derive(Debug, Clone)]
pub struct GridFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
    /// Node is an atom or density break.
    kinks: Vec<bool>,
    tail: Expr,
}

impl GridFunction {
    fn new(nodes: Vec<f64>, values: Vec<f64>, kinks: Vec<bool>, tail: Expr) -> Self {
        GridFunction {
            nodes,
            values,
            kinks,
            tail,
        }
    }

    /// Samples of an expression in `x` on `nodes`, with that expression as tail.
    pub fn from_expr(e: &Expr, nodes: Vec<f64>, kinks: Vec<bool>) -> Result<Self, EvalError> {
        let values = nodes.iter().map(|&x| e.eval_x(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(GridFunction::new(nodes, values, kinks, e.clone()))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated value; the tail model past the last node.
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let n = self.nodes.len();
        let last = self.nodes[n - 1];
        if x > last {
            return self.tail.eval_x(x);
        }
        if x <= self.nodes[0] {
            return Ok(self.values[0]);
        }
        let i = self.nodes.partition_point(|&t| t <= x) - 1;
        if self.nodes[i] == x {
            return Ok(self.values[i]);
        }
        Ok(self.interpolate(i, x))
    }

    fn interpolate(&self, cell: usize, x: f64) -> f64 {
        let n = self.nodes.len();
        let mut lo = cell;
        let mut hi = cell + 1;
        // widen to four nodes without stepping over a kink
        while hi - lo < 3 {
            let can_left = lo > 0 && !self.kinks[lo];
            let can_right = hi + 1 < n && !self.kinks[hi];
            let left_first = cell - lo < hi - cell;
            if can_left && (left_first || !can_right) {
                lo -= 1;
            } else if can_right {
                hi += 1;
            } else {
                break;
            }
        }
        lagrange(&self.nodes[lo..=hi], &self.values[lo..=hi], x)
    }

    fn insert(&mut self, at: usize, x: f64, value: f64) {
        self.nodes.insert(at, x);
        self.values.insert(at, value);
        self.kinks.insert(at, false);
    }
}

fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut total = 0.0;
    for (j, (&xj, &yj)) in xs.iter().zip(ys).enumerate() {
        let mut w = 1.0;
        for (k, &xk) in xs.iter().enumerate() {
            if k != j {
                w *= (x - xk) / (xj - xk);
            }
        }
        total += w * yj;
    }
    total
}

/// Initial nodes on `[x0, H]` and their kink flags.
pub fn initial_grid(m: &Measure, x0: f64, horizon: f64, n: usize, max_nodes: usize) -> Result<(Vec<f64>, Vec<bool>), FixedPointError> {
    let s = x0.abs().max(1.0);
    let growth = 1.0 + (horizon - x0) / s;
    let mut pts: Vec<(f64, bool)> = (0..=n)
        .map(|i| (x0 + s * (growth.powf(i as f64 / n as f64) - 1.0), false))
        .collect();
    pts[n].0 = horizon;
    let mut atom_count = 0usize;
    m.for_each_atom(x0, horizon, |a| -> Result<(), FixedPointError> {
        atom_count += 1;
        if atom_count > max_nodes {
            return Err(FixedPointError::GridTooLarge(max_nodes));
        }
        pts.push((a.location, true));
        Ok(())
    })?;
    pts.extend(m.density_breaks(x0, horizon).into_iter().map(|b| (b, true)));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nodes: Vec<f64> = Vec::with_capacity(pts.len());
    let mut kinks: Vec<bool> = Vec::with_capacity(pts.len());
    for (x, k) in pts {
        match nodes.last() {
            Some(&last) if x - last <= 1e-12 * x.abs().max(1.0) => {
                let i = kinks.len() - 1;
                kinks[i] |= k;
                // keep the exact atom location
                if k {
                    nodes[i] = x;
                }
            }
            _ => {
                nodes.push(x);
                kinks.push(k);
            }
        }
    }
    if nodes.len() > max_nodes {
        return Err(FixedPointError::GridTooLarge(max_nodes));
    }
    Ok((nodes, kinks))
}

/// Result of one application of `T`.
#[derive(Debug, Clone)]
pub struct Applied {
    pub func: GridFunction,
    /// `P(x) = ∫_(x,∞) F(s, y(s)) dσ(s)` at the nodes of `func`.
    pub mass: Vec<f64>,
    /// Refinement stopped at the node cap.
    pub capped: bool,
}

struct Cell {
    p: f64,
    q: f64,
}

fn cell_integrals<H>(h: &H, m: &Measure, a: f64, b: f64, tol: f64) -> Result<Cell, FixedPointError>
where
    H: Fn(f64) -> Result<f64, EvalError>,
{
    let p = quadrature::stieltjes_integral(h, m, a, b, tol)?;
    let q = quadrature::stieltjes_integral(|s| Ok((s - a) * h(s)?), m, a, b, tol)?;
    Ok(Cell { p, q })
}

/// `x ↦ f(x) − ∫_(x,∞) (s − x) F(s, y(s)) dσ(s)` tabulated on the nodes of
/// `y`, refined where the cubic interpolant misses midpoint values.
///
/// The returned function uses `f` as its model past the horizon.
pub fn apply_t(y: &GridFunction, p: &Problem, f: &Expr, opts: &PicardOptions) -> Result<Applied, FixedPointError> {
    if p.nonlinearity.is_identically_zero() {
        let func = GridFunction::from_expr(f, y.nodes.clone(), y.kinks.clone())?;
        let mass = vec![0.0; func.nodes.len()];
        return Ok(Applied {
            func,
            mass,
            capped: false,
        });
    }
    let m = &p.measure;
    let nodes = y.nodes.clone();
    let n = nodes.len();
    let horizon = nodes[n - 1];
    let h = |s: f64| -> Result<f64, EvalError> { p.f_at(s, y.eval(s)?) };

    let tail_p = quadrature::tail_integral(h, m, horizon, opts.quad_tol, DEFAULT_TAIL_BUDGET)?;
    let tail_i = quadrature::tail_integral(|s| Ok((s - horizon) * h(s)?), m, horizon, opts.quad_tol, DEFAULT_TAIL_BUDGET)?;
    if !(tail_p.converged && tail_i.converged) {
        return Err(FixedPointError::TailDiverged { horizon });
    }

    let span = horizon - nodes[0];
    let mut mass = vec![0.0; n];
    let mut moment = vec![0.0; n];
    mass[n - 1] = tail_p.value;
    moment[n - 1] = tail_i.value;
    for i in (0..n - 1).rev() {
        let (a, b) = (nodes[i], nodes[i + 1]);
        let c = cell_integrals(&h, m, a, b, opts.quad_tol * (b - a) / span)?;
        mass[i] = c.p + mass[i + 1];
        moment[i] = c.q + moment[i + 1] + (b - a) * mass[i + 1];
    }
    let values = nodes
        .iter()
        .zip(&moment)
        .map(|(&x, &i)| Ok(f.eval_x(x)? - i))
        .collect::<Result<Vec<f64>, EvalError>>()?;
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(FixedPointError::NonFinite { x: nodes[k] });
    }
    let mut out = GridFunction::new(nodes, values, y.kinks.clone(), f.clone());

    // midpoint refinement; each new node gets its exact value
    let mut pending: Vec<usize> = (0..n - 1).collect();
    let mut capped = false;
    for _pass in 0..8 {
        let mut inserts: Vec<(usize, f64, f64, f64, f64)> = Vec::new();
        for &i in &pending {
            let (a, b) = (out.nodes[i], out.nodes[i + 1]);
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                continue;
            }
            let c = cell_integrals(&h, m, mid, b, opts.quad_tol * (b - mid) / span)?;
            let p_mid = c.p + mass[i + 1];
            let i_mid = c.q + moment[i + 1] + (b - mid) * mass[i + 1];
            let exact = f.eval_x(mid)? - i_mid;
            let approx = out.interpolate(i, mid);
            if (exact - approx).abs() > opts.interp_tol * exact.abs().max(1.0) {
                inserts.push((i, mid, exact, p_mid, i_mid));
            }
        }
        if inserts.is_empty() {
            break;
        }
        if out.nodes.len() + inserts.len() > opts.max_nodes {
            capped = true;
            break;
        }
        pending.clear();
        // insert back to front so earlier indices stay valid
        for (k, &(i, mid, value, p_mid, i_mid)) in inserts.iter().enumerate().rev() {
            out.insert(i + 1, mid, value);
            mass.insert(i + 1, p_mid);
            moment.insert(i + 1, i_mid);
            // indices of the two halves after all inserts before this one
            let shift = k;
            pending.push(i + shift);
            pending.push(i + shift + 1);
        }
        pending.sort_unstable();
    }
    Ok(Applied {
        func: out,
        mass,
        capped,
    })
}

/// Sup-norm of `u − v` over the nodes of `u`, weighted by `1/|f|` if asked.
fn sup_delta(u: &GridFunction, v: &GridFunction, f: &Expr, weighted: bool) -> Result<f64, EvalError> {
    let mut worst = 0.0f64;
    for (&x, &a) in u.nodes.iter().zip(&u.values) {
        let d = (a - v.eval(x)?).abs();
        let d = if weighted { d / f.eval_x(x)?.abs() } else { d };
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Bound on `|T_true y − T_truncated y|` from using the model past `H`.
///
/// With an envelope `k`, `|y − f| ≤ R(H) = ∫_H^∞ (t − H)(|F(t,0)| + 2k|f|) |dσ|`
/// on the tail (under `|y| ≤ 2|f|`), so the error is at most
/// `R(H) ∫_H^∞ (s − x0) k |dσ|`. Without `k` the whole modelled tail
/// magnitude `∫_H^∞ (s − x0)|F(s, f(s))| |dσ|` is returned.
pub fn tail_bound(p: &Problem, f: &Expr, x0: f64, horizon: f64, tol: f64) -> Result<f64, FixedPointError> {
    let m = &p.measure;
    let tail = |g: &dyn Fn(f64) -> Result<f64, EvalError>| -> Result<f64, FixedPointError> {
        let r = quadrature::tail_integral_with(g, m, horizon, tol, DEFAULT_TAIL_BUDGET, Integrator::Variation)?;
        if r.converged {
            Ok(r.value + r.tail_estimate)
        } else {
            Err(FixedPointError::TailDiverged { horizon })
        }
    };
    match &p.lipschitz {
        Some(k) => {
            let r = tail(&|t| Ok((t - horizon) * (p.f_at(t, 0.0)?.abs() + 2.0 * k.eval_x(t)?.abs() * f.eval_x(t)?.abs())))?;
            let w = tail(&|s| Ok((s - x0) * k.eval_x(s)?.abs()))?;
            Ok(r * w)
        }
        None => tail(&|s| Ok((s - x0) * p.f_at(s, f.eval_x(s)?)?.abs())),
    }
}

fn contraction_estimate(deltas: &[f64], floor: f64) -> Option<f64> {
    if deltas.len() < 3 {
        return None;
    }
    let usable: Vec<f64> = deltas.iter().copied().take_while(|&d| d > floor).collect();
    if usable.len() < 2 {
        return None;
    }
    let k = (usable.len() - 1) as f64;
    Some((usable[usable.len() - 1] / usable[0]).powf(1.0 / k))
}

/// Iterate `T` from `start` on `[x0, horizon]` until the successive
/// difference drops to `tol`.
pub fn picard_solve(
    p: &Problem,
    f: &Expr,
    start: &Start,
    x0: f64,
    opts: &PicardOptions,
) -> Result<(Solution, IterationReport), FixedPointError> {
    let domain = p.domain_start();
    if !(x0 >= domain && x0 < opts.horizon && opts.horizon.is_finite()) {
        return Err(FixedPointError::BadDomain {
            x0,
            start: domain,
            horizon: opts.horizon,
        });
    }
    let (nodes, kinks) = initial_grid(&p.measure, x0, opts.horizon, opts.initial_nodes, opts.max_nodes)?;
    let weighted = match p.delta {
        Some(delta) if delta > 0.0 => nodes
            .iter()
            .map(|&x| f.eval_x(x).map(|v| v.abs() >= delta))
            .collect::<Result<Vec<bool>, _>>()?
            .into_iter()
            .all(|b| b),
        _ => false,
    };
    let bound = if p.nonlinearity.is_identically_zero() {
        0.0
    } else {
        tail_bound(p, f, x0, opts.horizon, opts.quad_tol.max(opts.tail_tol * 1e-3))?
    };
    if bound > opts.tail_tol {
        return Err(FixedPointError::TailBound {
            bound,
            tol: opts.tail_tol,
        });
    }

    let mut report = IterationReport {
        iterations: 0,
        sup_deltas: Vec::new(),
        contraction_ratio: None,
        converged: false,
        horizon: opts.horizon,
        tail_bound: bound,
        weighted,
        nodes: nodes.len(),
        grid_capped: false,
        iterates: Vec::new(),
    };

    if p.nonlinearity.is_identically_zero() {
        // T is the constant map onto f
        let y = GridFunction::from_expr(f, nodes, kinks)?;
        let mass = vec![0.0; y.nodes.len()];
        report.iterations = 1;
        report.sup_deltas.push(0.0);
        report.converged = true;
        if opts.record_iterates {
            report.iterates.push(y.clone());
        }
        return Ok((to_solution(&y, &mass, f)?, report));
    }

    let start_expr = match start {
        Start::Constant(c) => Expr::constant(*c),
        Start::Forcing => f.clone(),
        Start::Function(e) => e.clone(),
    };
    let mut y = GridFunction::from_expr(&start_expr, nodes, kinks)?;
    if opts.record_iterates {
        report.iterates.push(y.clone());
    }
    let mut mass;
    let mut rises = 0usize;
    loop {
        let applied = apply_t(&y, p, f, opts)?;
        let delta = sup_delta(&applied.func, &y, f, weighted)?;
        mass = applied.mass;
        report.grid_capped |= applied.capped;
        y = applied.func;
        report.iterations += 1;
        if let Some(&last) = report.sup_deltas.last() {
            rises = if delta > last { rises + 1 } else { 0 };
        }
        report.sup_deltas.push(delta);
        if opts.record_iterates {
            report.iterates.push(y.clone());
        }
        report.nodes = y.nodes.len();
        report.contraction_ratio = contraction_estimate(&report.sup_deltas, noise_floor(opts));
        if delta <= opts.tol {
            report.converged = true;
            break;
        }
        if rises >= 3 || !delta.is_finite() {
            return Err(FixedPointError::Diverged(Box::new(report)));
        }
        if report.iterations >= opts.max_iter {
            break;
        }
    }
    Ok((to_solution(&y, &mass, f)?, report))
}

fn noise_floor(opts: &PicardOptions) -> f64 {
    (opts.tol * 1e-2).max(opts.quad_tol * 10.0)
}

fn to_solution(y: &GridFunction, mass: &[f64], f: &Expr) -> Result<Solution, EvalError> {
    let yprime = y
        .nodes
        .iter()
        .zip(mass)
        .map(|(&x, &pm)| Ok(derivative(f, x)? + pm))
        .collect::<Result<Vec<f64>, EvalError>>()?;
    let mut sol = Solution::from_samples(y.nodes.clone(), y.values.clone(), yprime, Method::Picard);
    sol.affine = vec![false; y.nodes.len().saturating_sub(1)];
    Ok(sol)
}

/// Five-point central difference.
fn derivative(f: &Expr, x: f64) -> Result<f64, EvalError> {
    let h = 1e-3 * x.abs().max(1.0);
    let g = |t: f64| f.eval_x(t);
    Ok((g(x - 2.0 * h)? - 8.0 * g(x - h)? + 8.0 * g(x + h)? - g(x + 2.0 * h)?) / (12.0 * h))
}

/// Apply `T` once to an expression start on a fresh grid.
pub fn apply_t_to_expr(y: &Expr, p: &Problem, f: &Expr, x0: f64, opts: &PicardOptions) -> Result<GridFunction, FixedPointError> {
    let (nodes, kinks) = initial_grid(&p.measure, x0, opts.horizon, opts.initial_nodes, opts.max_nodes)?;
    let start = GridFunction::from_expr(y, nodes, kinks)?;
    Ok(apply_t(&start, p, f, opts)?.func)
}

/// `k` iterations of `T` from `y`, returning every iterate after the start.
pub fn iterate_t(y: &Expr, p: &Problem, f: &Expr, x0: f64, k: usize, opts: &PicardOptions) -> Result<Vec<GridFunction>, FixedPointError> {
    let (nodes, kinks) = initial_grid(&p.measure, x0, opts.horizon, opts.initial_nodes, opts.max_nodes)?;
    let mut cur = GridFunction::from_expr(y, nodes, kinks)?;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        cur = apply_t(&cur, p, f, opts)?.func;
        out.push(cur.clone());
    }
    Ok(out)
}
