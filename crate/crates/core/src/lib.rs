//! Numerical tools for Volterra–Stieltjes integro-differential equations on a
//! half-axis: expressions, integrators, quadrature, forward solvers, Picard
//! iteration, hypothesis checks and asymptotic classification.

// `!(a < b)` is used deliberately so that NaN lands in the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod expr;
pub mod measure;
pub mod quadrature;
pub mod problem;
pub mod ivp;
pub mod fixedpoint;
pub mod hypotheses;
pub mod asymptotics;
pub mod cli;
