//! Structural diagnostics: principal-component counts at an explained
//! variance threshold, covariance effective rank, and the run-to-run
//! volatility of LLM-assigned weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sym_eigenvalues, Mat};
use crate::llm_gateway::WeightingRun;
use crate::marketdata::{ReturnsMatrix, WindowLabel};
use crate::num::Scalar;
use crate::portfolio::normalized_run_weights;
use crate::stats::{sample_covariance, sample_std};
use crate::symbol::Symbol;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("need at least two return rows, got {0}")]
    TooFewRows(usize),
    #[error("total variance is zero")]
    ZeroTotalVariance,
    #[error("matrix has no positive eigenvalues")]
    ZeroMatrix,
    #[error("weight volatility needs at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("matrix is not square")]
    NotSquare,
}

/// Consolidated structural diagnostics for one (model, sector) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport<F> {
    pub model_id: String,
    pub sector_name: String,
    /// Components needed to reach 95% explained variance.
    pub pca_components_95: usize,
    pub effective_rank: F,
    /// Concentration of the LLM-weighted portfolio.
    pub hhi: F,
    /// Mean per-ticker standard deviation of normalized weights across runs.
    pub weight_volatility: F,
    /// LLM-weighted portfolio volatility over index volatility, per window.
    pub relative_volatility_by_window: BTreeMap<WindowLabel, F>,
}

/// Eigenvalues of a covariance matrix, descending, negatives clamped to
/// zero at `clamp_rel` times the largest eigenvalue.
fn clamped_spectrum<F: Scalar>(c: &Mat<F>, clamp_rel: F) -> Result<Vec<F>, DiagnosticsError> {
    if c.nrows() != c.ncols() {
        return Err(DiagnosticsError::NotSquare);
    }
    let mut eig = sym_eigenvalues(c);
    let max = eig.first().copied().unwrap_or_else(F::zero);
    let floor = max.max(F::zero()) * clamp_rel;
    for v in &mut eig {
        if *v < floor {
            *v = F::zero();
        }
    }
    Ok(eig)
}

/// Smallest component count whose cumulative explained variance reaches
/// `threshold`, from a covariance matrix.
pub fn pca_components_from_cov<F: Scalar>(
    c: &Mat<F>,
    threshold: F,
) -> Result<usize, DiagnosticsError> {
    let t64 = threshold.to64();
    if !(t64 > 0.0 && t64 <= 1.0) {
        return Err(DiagnosticsError::InvalidThreshold(t64));
    }
    let eig = clamped_spectrum(c, F::zero())?;
    let total = eig.iter().copied().fold(F::zero(), |a, b| a + b);
    if total <= F::zero() {
        return Err(DiagnosticsError::ZeroTotalVariance);
    }
    let mut cum = F::zero();
    for (i, &v) in eig.iter().enumerate() {
        cum = cum + v;
        if cum / total >= threshold {
            return Ok(i + 1);
        }
    }
    Ok(eig.len())
}

/// Component count from a returns matrix: the covariance of its columns
/// is estimated first.
pub fn pca_components_for_threshold<F: Scalar>(
    r: &ReturnsMatrix<F>,
    threshold: F,
) -> Result<usize, DiagnosticsError> {
    if r.periods() < 2 {
        return Err(DiagnosticsError::TooFewRows(r.periods()));
    }
    pca_components_from_cov(&sample_covariance(r.values()), threshold)
}

/// Effective rank: `exp(H)` where `H` is the Shannon entropy (natural
/// log) of the normalized eigenvalue spectrum. Eigenvalues below 1e-12
/// of the largest are treated as zero.
pub fn effective_rank<F: Scalar>(c: &Mat<F>) -> Result<F, DiagnosticsError> {
    let eig = clamped_spectrum(c, F::of(1e-12))?;
    let total = eig.iter().copied().fold(F::zero(), |a, b| a + b);
    if total <= F::zero() {
        return Err(DiagnosticsError::ZeroMatrix);
    }
    let mut entropy = F::zero();
    for &v in &eig {
        if v > F::zero() {
            let p = v / total;
            entropy = entropy - p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Mean across tickers of the per-ticker sample standard deviation of
/// normalized weights across runs. Absent tickers count as zero weight;
/// zero-total runs are skipped.
pub fn weight_volatility<F: Scalar>(
    runs: &[WeightingRun],
    tickers: &[Symbol],
) -> Result<F, DiagnosticsError> {
    let normalized: Vec<Vec<F>> = runs
        .iter()
        .filter_map(|r| normalized_run_weights(r, tickers))
        .collect();
    if normalized.len() < 2 {
        return Err(DiagnosticsError::TooFewRuns(normalized.len()));
    }
    let mut acc = F::zero();
    for j in 0..tickers.len() {
        let column: Vec<F> = normalized.iter().map(|run| run[j]).collect();
        acc = acc + sample_std(&column);
    }
    Ok(acc / F::of_usize(tickers.len()))
}
