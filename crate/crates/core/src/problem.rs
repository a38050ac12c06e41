//! The problem bundle shared by the solvers and checkers.

use std::sync::Arc;

use crate::expr::{EvalError, Expr};
use crate::measure::Measure;

/// `F(x, y)` with optional Lipschitz envelope `k`, forcing double-primitive
/// `f` and lower bound `δ ≤ |f|`, posed against the integrator `σ`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub nonlinearity: Expr,
    pub lipschitz: Option<Expr>,
    pub forcing: Option<Expr>,
    pub delta: Option<f64>,
    pub measure: Arc<Measure>,
}

impl Problem {
    pub fn new(nonlinearity: Expr, measure: Measure) -> Self {
        Problem {
            nonlinearity,
            lipschitz: None,
            forcing: None,
            delta: None,
            measure: Arc::new(measure),
        }
    }

    pub fn with_lipschitz(mut self, k: Expr) -> Self {
        self.lipschitz = Some(k);
        self
    }

    pub fn with_forcing(mut self, f: Expr) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn domain_start(&self) -> f64 {
        self.measure.domain_start()
    }

    /// `F(x, y)`; expressions that ignore `y` accept any value.
    pub fn f_at(&self, x: f64, y: f64) -> Result<f64, EvalError> {
        self.nonlinearity.eval(x, y)
    }
}
