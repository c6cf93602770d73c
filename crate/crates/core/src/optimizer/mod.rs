//! Bounded mean-variance optimization: moment estimation, the active-set
//! quadratic program, efficient-frontier tracing, and the three optimized
//! portfolios (minimum variance, maximum return, maximum Sharpe).

mod frontier;
mod moments;
mod qp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::num::Scalar;
use crate::portfolio::{PortfolioError, WeightBounds};
use crate::symbol::Symbol;

pub use frontier::{pick_portfolios, trace_frontier};
pub use moments::estimate_moments;
pub use qp::{max_return_weights, solve_min_variance, solve_qp};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("need at least two return rows, got {0}")]
    TooFewRows(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("infeasible program: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
}

/// Expected returns and covariance estimated from in-sample returns.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentModel<F> {
    pub tickers: Vec<Symbol>,
    /// Per-period expected returns (column sample means).
    pub mu: Vec<F>,
    /// Unbiased sample covariance, ridge-adjusted when near-singular.
    pub q: Mat<F>,
    /// Diagonal shift applied to restore positive semidefiniteness.
    pub ridge: Option<F>,
    /// True when T < n + 1 (sample covariance is rank-deficient).
    pub underdetermined: bool,
}

impl<F: Scalar> MomentModel<F> {
    pub fn assets(&self) -> usize {
        self.tickers.len()
    }

    /// Portfolio expected return `muᵀw`.
    pub fn expected_return(&self, w: &[F]) -> F {
        self.mu
            .iter()
            .zip(w)
            .fold(F::zero(), |acc, (&m, &x)| acc + m * x)
    }

    /// Portfolio variance `wᵀQw`.
    pub fn variance(&self, w: &[F]) -> F {
        self.q.quad_form(w)
    }

    /// Objective gradient `2Qw`.
    pub fn gradient(&self, w: &[F]) -> Vec<F> {
        self.q
            .matvec(w)
            .into_iter()
            .map(|v| F::of(2.0) * v)
            .collect()
    }
}

/// One solution on the efficient frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint<F> {
    pub epsilon: F,
    pub weights: Vec<F>,
    pub expected_return: F,
    pub variance: F,
    pub sharpe: F,
}

/// Frontier points ordered by target return, plus the bounds they obey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficientFrontier<F> {
    pub tickers: Vec<Symbol>,
    pub bounds: WeightBounds<F>,
    pub points: Vec<FrontierPoint<F>>,
}

/// First-order optimality residuals at a returned solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport<F> {
    /// |sum(w) - 1|
    pub sum_residual: F,
    /// max(l - w_i, w_i - u, 0) over assets
    pub max_bound_violation: F,
    /// max(0, epsilon - muᵀw) when the return constraint is present
    pub return_violation: F,
    /// Norm of the gradient projected against the active-set multipliers.
    pub projected_gradient_norm: F,
    pub iterations: usize,
}

/// Solver output: feasible weights and the KKT residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<F> {
    pub weights: Vec<F>,
    pub kkt: KktReport<F>,
}
