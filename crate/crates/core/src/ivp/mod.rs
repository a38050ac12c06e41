//! Forward solution of `y′(x) = y′(a) − ∫_(a,x] F(t, y(t)) dσ(t)`.
//!
//! Density pieces are integrated as the first-order system
//! `y′ = v, v′ = −F(x, y)ρ(x)` with adaptive Dormand–Prince steps. Atom-only
//! stretches are exact straight lines, and crossing an atom at `t` applies
//! `v ← v − F(t, y(t))·jump(t)` with `y` unchanged.

mod discrete;
mod dopri;

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::measure::Measure;
use crate::problem::Problem;

pub use discrete::{solve_recurrence, three_term_normalize, Normalization};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IvpError {
    #[error("solution blew up near x = {x} (|y| = {y:e})")]
    BlowUp { x: f64, y: f64 },
    #[error("step size underflow at x = {x} (h = {h:e})")]
    StepUnderflow { x: f64, h: f64 },
    #[error("interval [{a}, {b}] is empty or starts before the domain start {start}")]
    BadInterval { a: f64, b: f64, start: f64 },
    #[error("recurrence needs N >= 2, got {0}")]
    TooShort(usize),
    #[error("non-finite iterate at n = {n}")]
    NonFiniteIterate { n: usize },
    #[error("c_{n} is zero")]
    ZeroCoefficient { n: usize },
    #[error("alpha_{n} is zero")]
    ZeroWeight { n: usize },
    #[error("back-substitution residual {residual:e} at n = {n}")]
    BackSubstitution { n: usize, residual: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Step-size control for the density pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on any step; part of the accuracy control.
    pub max_step: f64,
    pub min_step: f64,
    /// `|y|` above this is treated as blow-up.
    pub bound: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: 0.05,
            min_step: 1e-14,
            bound: 1e12,
        }
    }
}

impl StepControl {
    /// All three accuracy knobs halved.
    pub fn halved(&self) -> Self {
        StepControl {
            rtol: self.rtol / 2.0,
            atol: self.atol / 2.0,
            max_step: self.max_step / 2.0,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Adaptive Runge–Kutta on density pieces (possibly mixed with atoms).
    RungeKutta,
    /// Atom-only measure: exact polygonal solution.
    Polygonal,
    /// Direct recurrence output on the integers.
    Recurrence,
    /// Fixed point of the Picard map.
    Picard,
    /// Tabulated externally.
    Samples,
}

/// Breakpoint grid with values and right derivatives.
#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: Vec<f64>,
    pub y: Vec<f64>,
    pub yprime_right: Vec<f64>,
    /// Left derivative at each node; differs from the right one at atoms.
    pub yprime_left: Vec<f64>,
    /// `true` where the piece from node `i` to `i + 1` carries no density.
    pub affine: Vec<bool>,
    pub method: Method,
    pub measure_ref: Option<Arc<Measure>>,
}

impl Solution {
    /// Solution from samples with smooth (cubic) pieces throughout.
    pub fn from_samples(grid: Vec<f64>, y: Vec<f64>, yprime: Vec<f64>, method: Method) -> Self {
        assert_eq!(grid.len(), y.len());
        assert_eq!(grid.len(), yprime.len());
        let n = grid.len();
        Solution {
            grid,
            y,
            yprime_left: yprime.clone(),
            yprime_right: yprime,
            affine: vec![false; n.saturating_sub(1)],
            method,
            measure_ref: None,
        }
    }

    /// Tabulate `y` and `y′` from closures on a uniform grid.
    pub fn tabulate(
        a: f64,
        b: f64,
        nodes: usize,
        y: impl Fn(f64) -> f64,
        yprime: impl Fn(f64) -> f64,
    ) -> Self {
        let grid: Vec<f64> = (0..nodes)
            .map(|i| a + (b - a) * i as f64 / (nodes - 1) as f64)
            .collect();
        let ys = grid.iter().map(|&x| y(x)).collect();
        let yp = grid.iter().map(|&x| yprime(x)).collect();
        Solution::from_samples(grid, ys, yp, Method::Samples)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    fn piece(&self, x: f64) -> Option<usize> {
        if self.grid.is_empty() || x < self.start() || x > self.end() {
            return None;
        }
        let i = self.grid.partition_point(|&g| g <= x);
        Some(i.saturating_sub(1).min(self.grid.len().saturating_sub(2)))
    }

    /// Dense output: linear on atom-only pieces, cubic Hermite elsewhere.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let i = self.piece(x)?;
        if self.grid.len() == 1 {
            return Some(self.y[0]);
        }
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        if self.affine[i] {
            return Some(y0 + (y1 - y0) * t);
        }
        let (d0, d1) = (self.yprime_right[i] * h, self.yprime_left[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        Some(
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                + (t3 - 2.0 * t2 + t) * d0
                + (-2.0 * t3 + 3.0 * t2) * y1
                + (t3 - t2) * d1,
        )
    }

    /// Right derivative of the dense output.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        let i = self.piece(x)?;
        if self.grid.len() == 1 {
            return Some(self.yprime_right[0]);
        }
        if x == self.grid[i + 1] && i + 1 < self.grid.len() {
            return Some(self.yprime_right[i + 1]);
        }
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        if self.affine[i] {
            return Some(self.yprime_right[i]);
        }
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (d0, d1) = (self.yprime_right[i] * h, self.yprime_left[i + 1] * h);
        let t2 = t * t;
        Some(
            ((6.0 * t2 - 6.0 * t) * y0
                + (3.0 * t2 - 4.0 * t + 1.0) * d0
                + (-6.0 * t2 + 6.0 * t) * y1
                + (3.0 * t2 - 2.0 * t) * d1)
                / h,
        )
    }

    /// CSV with header `x,y,yprime`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,yprime\n");
        for i in 0..self.grid.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_num(self.grid[i]),
                fmt_num(self.y[i]),
                fmt_num(self.yprime_right[i])
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Shortest round-trip decimal, switching to exponent form for extremes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Forward-solve from `a` with `y(a) = y0`, `y′(a) = yp0` up to `b`.
///
/// An atom located exactly at `a` is not crossed; atoms in `(a, b]` are.
pub fn solve_ivp(
    p: &Problem,
    y0: f64,
    yp0: f64,
    a: f64,
    b: f64,
    ctrl: &StepControl,
) -> Result<Solution, IvpError> {
    let m = &p.measure;
    let start = m.domain_start();
    if !(a >= start && b > a && b.is_finite()) {
        return Err(IvpError::BadInterval { a, b, start });
    }
    let mut events: Vec<f64> = m.atom_locations(a, b)?;
    events.extend(m.density_breaks(a, b));
    events.push(b);
    events.sort_by(f64::total_cmp);
    events.dedup();

    let mut grid = vec![a];
    let mut ys = vec![y0];
    let mut vr = vec![yp0];
    let mut vl = vec![yp0];
    let mut affine = Vec::new();
    let (mut y, mut v) = (y0, yp0);
    let mut x = a;
    let mut h = 0.0;
    let mut any_density = false;
    let mut atoms = m.atoms_in(a, b)?.into_iter().peekable();

    for &e in &events {
        let mid = 0.5 * (x + e);
        match m.segment_at(mid) {
            Some(seg) => {
                any_density = true;
                let rho = &seg.rho;
                let rhs = |t: f64, yy: f64| -> Result<f64, EvalError> {
                    let r = rho.eval_x(t)?;
                    if r == 0.0 {
                        return Ok(0.0);
                    }
                    Ok(-p.f_at(t, yy)? * r)
                };
                let mut nodes = Vec::new();
                let s = dopri::integrate(&rhs, x, e, [y, v], &mut h, ctrl, &mut nodes)?;
                for (xn, yn, vn) in nodes {
                    grid.push(xn);
                    ys.push(yn);
                    vr.push(vn);
                    vl.push(vn);
                    affine.push(false);
                }
                y = s[0];
                v = s[1];
            }
            None => {
                y += v * (e - x);
                if !(y.abs() <= ctrl.bound) {
                    return Err(IvpError::BlowUp { x: e, y });
                }
                grid.push(e);
                ys.push(y);
                vr.push(v);
                vl.push(v);
                affine.push(true);
            }
        }
        x = e;
        if let Some(atom) = atoms.next_if(|at| at.location == e) {
            let last = vr.len() - 1;
            v -= p.f_at(e, y)? * atom.jump;
            if !v.is_finite() {
                return Err(IvpError::BlowUp { x: e, y });
            }
            vr[last] = v;
        }
    }

    Ok(Solution {
        grid,
        y: ys,
        yprime_right: vr,
        yprime_left: vl,
        affine,
        method: if any_density {
            Method::RungeKutta
        } else {
            Method::Polygonal
        },
        measure_ref: Some(Arc::clone(&p.measure)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, parse_sequence};
    use crate::measure::Measure;
    use approx::assert_relative_eq;

    fn example_211() -> Problem {
        Problem::new(parse_expr("(x+1)^-4 + sin(x)").unwrap(), Measure::lebesgue(0.0))
    }

    fn exact_211(x: f64) -> f64 {
        x.sin() - 1.0 / (6.0 * (x + 1.0).powi(2))
    }

    #[test]
    fn closed_form_forcing_example() {
        let sol = solve_ivp(&example_211(), -1.0 / 6.0, 1.0 + 1.0 / 3.0, 0.0, 50.0, &StepControl::default()).unwrap();
        let err = sol
            .grid
            .iter()
            .zip(&sol.y)
            .map(|(&x, &y)| (y - exact_211(x)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "max error {err}");
        // dense output stays accurate between nodes
        for i in 0..500 {
            let x = 0.1 * i as f64 + 0.037;
            assert!((sol.eval(x).unwrap() - exact_211(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn free_motion_is_exact() {
        let p = Problem::new(parse_expr("0").unwrap(), Measure::lebesgue(0.0));
        let sol = solve_ivp(&p, 2.0, -0.5, 1.0, 9.0, &StepControl::default()).unwrap();
        for (&x, &y) in sol.grid.iter().zip(&sol.y) {
            assert_relative_eq!(y, 2.0 - 0.5 * (x - 1.0), epsilon = 1e-13);
        }
        let step = Measure::step_at_integers(parse_sequence("1").unwrap(), 0, None).unwrap();
        let p = Problem::new(parse_expr("0").unwrap(), step);
        let sol = solve_ivp(&p, 1.0, 2.0, 0.0, 5.0, &StepControl::default()).unwrap();
        assert_eq!(sol.method, Method::Polygonal);
        assert_eq!(sol.grid, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(sol.y, vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0]);
    }

    #[test]
    fn pure_step_matches_recurrence() {
        let b = parse_sequence("0.2 + 0.05*sin(n)").unwrap();
        let f = parse_expr("y").unwrap();
        let rec = solve_recurrence(&f, &b, 0.3, 0.7, 40).unwrap();
        let p = Problem::new(f, Measure::difference_equation(b).unwrap());
        let sol = solve_ivp(&p, 0.3, 0.7 - 0.3, 0.0, 40.0, &StepControl::default()).unwrap();
        assert_eq!(sol.len(), 41);
        for (n, r) in rec.iter().enumerate() {
            assert_eq!(sol.grid[n], n as f64);
            assert!((sol.y[n] - r).abs() <= 1e-12 * r.abs().max(1.0));
        }
        // the jump in the right derivative is −F·jump
        for n in 1..40 {
            let jump = sol.yprime_right[n] - sol.yprime_left[n];
            let expect = -sol.y[n] * (0.2 + 0.05 * (n as f64).sin());
            assert!((jump - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn atom_at_start_is_not_crossed() {
        let step = Measure::step_at_integers(parse_sequence("1").unwrap(), 0, None).unwrap();
        let p = Problem::new(parse_expr("1").unwrap(), step);
        let sol = solve_ivp(&p, 0.0, 1.0, 0.0, 1.0, &StepControl::default()).unwrap();
        assert_eq!(sol.y[1], 1.0);
        assert_eq!(sol.yprime_right[1], 0.0);
    }

    #[test]
    fn blow_up_is_reported() {
        let p = Problem::new(parse_expr("-y^2").unwrap(), Measure::lebesgue(0.0));
        let err = solve_ivp(&p, 1.0, 1.0, 0.0, 10.0, &StepControl::default()).unwrap_err();
        assert!(matches!(err, IvpError::BlowUp { .. } | IvpError::StepUnderflow { .. }));
    }

    #[test]
    fn derivative_nonincreasing_for_positive_f() {
        let m = crate::measure::measure_from_parts(
            0.0,
            crate::measure::AtomSet::Finite(vec![
                crate::measure::Atom { location: 1.5, jump: 0.3 },
                crate::measure::Atom { location: 4.0, jump: 1.0 },
            ]),
            vec![crate::measure::DensitySegment::new(0.0, 3.0, parse_expr("1/(1+x)").unwrap())],
        )
        .unwrap();
        let p = Problem::new(parse_expr("y^2/(1+x^2) + 0.1").unwrap(), m);
        let sol = solve_ivp(&p, 0.5, 1.0, 0.0, 6.0, &StepControl::default()).unwrap();
        for w in sol.yprime_right.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(sol.grid.contains(&1.5) && sol.grid.contains(&4.0));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let sol = Solution::tabulate(0.0, 1.0, 3, |x| x, |_| 1.0);
        assert_eq!(sol.to_csv(), "x,y,yprime\n0,0,1\n0.5,0.5,1\n1,1,1\n");
    }
}
