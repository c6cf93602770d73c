//! Out-of-sample evaluation: portfolio return series, cumulative paths,
//! Sharpe ratios, relative volatility, and the Green/Yellow/Red outcome
//! classification against the sector index.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::{ReturnsMatrix, WindowLabel};
use crate::num::Scalar;
use crate::portfolio::{Portfolio, PortfolioKind};
use crate::stats::{mean, sample_std};
use crate::symbol::Symbol;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("portfolio ticker {0} is missing from the returns matrix")]
    MissingColumn(Symbol),
    #[error("empty return series")]
    EmptySeries,
    #[error("series needs at least two observations, got {0}")]
    SeriesTooShort(usize),
    #[error("return series has zero volatility")]
    ZeroVolatility,
    #[error("index series has zero volatility")]
    ZeroIndexVolatility,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("classification needs all five portfolio kinds; missing {0}")]
    IncompleteSet(PortfolioKind),
}

/// What a backtested return series belongs to: one of the five portfolio
/// variants, or the sector index itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Portfolio(PortfolioKind),
    Index,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesKind::Portfolio(kind) => kind.fmt(f),
            SeriesKind::Index => f.write_str("index"),
        }
    }
}

/// Identifies which series a result belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioRef {
    pub kind: SeriesKind,
    pub model_id: String,
    pub sector_name: String,
}

/// Per-window performance of one portfolio (or of the sector index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult<F> {
    pub portfolio_ref: PortfolioRef,
    pub window_label: WindowLabel,
    /// Dates the per-period returns were realized on.
    pub dates: Vec<chrono::NaiveDate>,
    pub return_series: Vec<F>,
    /// Gross cumulative value, starting at (1 + r_1).
    pub cumulative_path: Vec<F>,
    pub mean_cumulative_return: F,
    pub sharpe: F,
    /// Per-period return standard deviation (unbiased).
    pub volatility: F,
    /// Portfolio volatility over index volatility; 1 for the index itself.
    pub relative_volatility: F,
}

/// Which summary metric a classification compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricBasis {
    CumulativeReturn,
    Sharpe,
}

impl fmt::Display for MetricBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricBasis::CumulativeReturn => "cumulative",
            MetricBasis::Sharpe => "sharpe",
        })
    }
}

/// How the per-window summary of the cumulative path is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CumulativeMode {
    /// Average of the gross cumulative path over the window.
    #[default]
    MeanPath,
    /// Terminal gross value.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Green,
    Yellow,
    Red,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Green => "Green",
            Outcome::Yellow => "Yellow",
            Outcome::Red => "Red",
        })
    }
}

/// Outcome plus the metric it was judged on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeClass {
    pub value: Outcome,
    pub basis: MetricBasis,
}

/// Weighted per-period portfolio returns: `return_t = Σ_i w_i r[t, i]`.
pub fn portfolio_returns<F: Scalar>(
    r: &ReturnsMatrix<F>,
    p: &Portfolio<F>,
) -> Result<Vec<F>, BacktestError> {
    let cols: Vec<usize> = p
        .tickers()
        .iter()
        .map(|t| {
            r.column_index(t)
                .ok_or_else(|| BacktestError::MissingColumn(t.clone()))
        })
        .collect::<Result<_, _>>()?;
    let weights = p.weights();
    Ok((0..r.periods())
        .map(|t| {
            let row = r.values().row(t);
            cols.iter()
                .zip(weights)
                .fold(F::zero(), |acc, (&c, &w)| acc + w * row[c])
        })
        .collect())
}

/// Cumulative gross path and its summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeMetrics<F> {
    pub path: Vec<F>,
    pub mean_path: F,
    pub terminal: F,
}

impl<F: Scalar> CumulativeMetrics<F> {
    pub fn summary(&self, mode: CumulativeMode) -> F {
        match mode {
            CumulativeMode::MeanPath => self.mean_path,
            CumulativeMode::Terminal => self.terminal,
        }
    }
}

/// `V_t = Π_{s<=t} (1 + r_s)` and the window mean of that path.
pub fn cumulative_metrics<F: Scalar>(series: &[F]) -> Result<CumulativeMetrics<F>, BacktestError> {
    if series.is_empty() {
        return Err(BacktestError::EmptySeries);
    }
    let mut path = Vec::with_capacity(series.len());
    let mut v = F::one();
    for &r in series {
        v = v * (F::one() + r);
        path.push(v);
    }
    let mean_path = mean(&path);
    Ok(CumulativeMetrics {
        mean_path,
        terminal: v,
        path,
    })
}

/// Geometric de-annualization of the risk-free rate.
pub fn per_period_rf<F: Scalar>(rf_annual: F, periods_per_year: u32) -> F {
    (F::one() + rf_annual).powf(F::one() / F::of_usize(periods_per_year as usize)) - F::one()
}

/// `(mean(series) - rf) / std(series)` with the unbiased standard
/// deviation and a geometrically de-annualized risk-free rate.
pub fn sharpe_ratio<F: Scalar>(
    series: &[F],
    rf_annual: F,
    periods_per_year: u32,
) -> Result<F, BacktestError> {
    if series.len() < 2 {
        return Err(BacktestError::SeriesTooShort(series.len()));
    }
    let std = sample_std(series);
    if std <= F::zero() {
        return Err(BacktestError::ZeroVolatility);
    }
    let rf = per_period_rf(rf_annual, periods_per_year);
    Ok((mean(series) - rf) / std)
}

/// Portfolio volatility divided by index volatility over the same window.
pub fn relative_volatility<F: Scalar>(
    portfolio_series: &[F],
    index_series: &[F],
) -> Result<F, BacktestError> {
    if portfolio_series.len() != index_series.len() {
        return Err(BacktestError::LengthMismatch(
            portfolio_series.len(),
            index_series.len(),
        ));
    }
    let index_std = sample_std(index_series);
    if index_std <= F::zero() {
        return Err(BacktestError::ZeroIndexVolatility);
    }
    Ok(sample_std(portfolio_series) / index_std)
}

/// Classify one (model, sector, window) cell given the five portfolio
/// metrics and the index metric. Outperformance is strict inequality;
/// ties classify downward.
pub fn classify_metrics<F: Scalar>(
    metrics: &BTreeMap<PortfolioKind, F>,
    index_metric: F,
    basis: MetricBasis,
) -> Result<OutcomeClass, BacktestError> {
    for kind in PortfolioKind::ALL {
        if !metrics.contains_key(&kind) {
            return Err(BacktestError::IncompleteSet(kind));
        }
    }
    let value = if metrics[&PortfolioKind::LlmWeighted] > index_metric {
        Outcome::Green
    } else if PortfolioKind::ALL
        .iter()
        .filter(|k| **k != PortfolioKind::LlmWeighted)
        .any(|k| metrics[k] > index_metric)
    {
        Outcome::Yellow
    } else {
        Outcome::Red
    };
    Ok(OutcomeClass { value, basis })
}

/// [`classify_metrics`] over assembled results, selecting the metric
/// named by `basis`.
pub fn classify<F: Scalar>(
    results: &BTreeMap<PortfolioKind, BacktestResult<F>>,
    index_result: &BacktestResult<F>,
    basis: MetricBasis,
) -> Result<OutcomeClass, BacktestError> {
    let pick = |r: &BacktestResult<F>| match basis {
        MetricBasis::CumulativeReturn => r.mean_cumulative_return,
        MetricBasis::Sharpe => r.sharpe,
    };
    let metrics: BTreeMap<PortfolioKind, F> =
        results.iter().map(|(k, r)| (*k, pick(r))).collect();
    classify_metrics(&metrics, pick(index_result), basis)
}

/// Assemble a full [`BacktestResult`] for one return series.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_series<F: Scalar>(
    portfolio_ref: PortfolioRef,
    window_label: WindowLabel,
    dates: Vec<chrono::NaiveDate>,
    series: Vec<F>,
    index_series: Option<&[F]>,
    rf_annual: F,
    periods_per_year: u32,
    mode: CumulativeMode,
) -> Result<BacktestResult<F>, BacktestError> {
    if dates.len() != series.len() {
        return Err(BacktestError::LengthMismatch(dates.len(), series.len()));
    }
    let cumulative = cumulative_metrics(&series)?;
    let sharpe = sharpe_ratio(&series, rf_annual, periods_per_year)?;
    let volatility = sample_std(&series);
    let relative = match index_series {
        Some(index) => relative_volatility(&series, index)?,
        None => F::one(),
    };
    Ok(BacktestResult {
        portfolio_ref,
        window_label,
        dates,
        mean_cumulative_return: cumulative.summary(mode),
        cumulative_path: cumulative.path,
        sharpe,
        volatility,
        relative_volatility: relative,
        return_series: series,
    })
}
