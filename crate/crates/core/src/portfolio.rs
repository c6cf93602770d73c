//! Portfolio construction: LLM-weighted averaging, equal weighting,
//! optimizer weight bounds, and concentration (HHI).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::WeightingRun;
use crate::num::{dot2, Scalar};
use crate::symbol::Symbol;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("no tickers supplied")]
    EmptyTickers,
    #[error("tickers and weights differ in length ({tickers} vs {weights})")]
    LengthMismatch { tickers: usize, weights: usize },
    #[error("duplicate ticker {0}")]
    DuplicateTicker(Symbol),
    #[error("negative weight {weight} for {symbol}")]
    NegativeWeight { symbol: Symbol, weight: f64 },
    #[error("weights sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("every weighting run assigns zero total weight")]
    AllZero,
    #[error("weight bounds need at least two assets, got {0}")]
    DegenerateUniverse(usize),
    #[error("no weighting runs supplied")]
    NoRuns,
}

/// The five portfolio variants built for each (model, sector) universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortfolioKind {
    LlmWeighted,
    EqualWeighted,
    MinVariance,
    MaxReturn,
    MaxSharpe,
}

impl PortfolioKind {
    pub const ALL: [PortfolioKind; 5] = [
        PortfolioKind::LlmWeighted,
        PortfolioKind::EqualWeighted,
        PortfolioKind::MinVariance,
        PortfolioKind::MaxReturn,
        PortfolioKind::MaxSharpe,
    ];
}

impl fmt::Display for PortfolioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PortfolioKind::LlmWeighted => "llm_weighted",
            PortfolioKind::EqualWeighted => "equal_weighted",
            PortfolioKind::MinVariance => "min_variance",
            PortfolioKind::MaxReturn => "max_return",
            PortfolioKind::MaxSharpe => "max_sharpe",
        };
        f.write_str(s)
    }
}

/// A labeled long-only weight vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio<F> {
    pub kind: PortfolioKind,
    pub model_id: String,
    pub sector_name: String,
    tickers: Vec<Symbol>,
    weights: Vec<F>,
}

impl<F: Scalar> Portfolio<F> {
    pub fn new(
        kind: PortfolioKind,
        model_id: &str,
        sector_name: &str,
        tickers: Vec<Symbol>,
        weights: Vec<F>,
    ) -> Result<Self, PortfolioError> {
        if tickers.is_empty() {
            return Err(PortfolioError::EmptyTickers);
        }
        if tickers.len() != weights.len() {
            return Err(PortfolioError::LengthMismatch {
                tickers: tickers.len(),
                weights: weights.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &tickers {
            if !seen.insert(t.clone()) {
                return Err(PortfolioError::DuplicateTicker(t.clone()));
            }
        }
        for (t, &w) in tickers.iter().zip(&weights) {
            if w < F::zero() {
                return Err(PortfolioError::NegativeWeight {
                    symbol: t.clone(),
                    weight: w.to64(),
                });
            }
        }
        let total = crate::num::sum2(&weights);
        if (total - F::one()).abs() > F::of(1e-9) {
            return Err(PortfolioError::NotNormalized(total.to64()));
        }
        Ok(Portfolio {
            kind,
            model_id: model_id.to_string(),
            sector_name: sector_name.to_string(),
            tickers,
            weights,
        })
    }

    pub fn tickers(&self) -> &[Symbol] {
        &self.tickers
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }
}

/// Box bounds `l <= w_i <= u` applied to the optimizer's portfolios:
/// half and twice the equal weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds<F> {
    pub lower: F,
    pub upper: F,
    pub n: usize,
}

/// `l = 1/(2n)`, `u = 2/n`.
pub fn weight_bounds<F: Scalar>(n: usize) -> Result<WeightBounds<F>, PortfolioError> {
    if n < 2 {
        return Err(PortfolioError::DegenerateUniverse(n));
    }
    let nf = F::of_usize(n);
    Ok(WeightBounds {
        lower: F::one() / (F::of(2.0) * nf),
        upper: F::of(2.0) / nf,
        n,
    })
}

/// Per-run weights over `tickers`, normalized to sum one, missing tickers
/// as zero. `None` when the run assigns zero total weight.
pub(crate) fn normalized_run_weights<F: Scalar>(
    run: &WeightingRun,
    tickers: &[Symbol],
) -> Option<Vec<F>> {
    let raw: Vec<F> = tickers
        .iter()
        .map(|t| F::of(run.weights.get(t).copied().unwrap_or(0.0)))
        .collect();
    let total = crate::num::sum2(&raw);
    if total <= F::zero() {
        return None;
    }
    Some(raw.into_iter().map(|w| w / total).collect())
}

/// Average the per-run normalized weights into the LLM-weighted portfolio.
///
/// Each run is first normalized over the tickers it names (absent tickers
/// contribute zero for that run), the per-ticker mean is taken across
/// runs, and the result is renormalized to sum exactly one. Zero-total
/// runs are skipped with a warning.
pub fn average_weights<F: Scalar>(
    runs: &[WeightingRun],
    tickers: &[Symbol],
) -> Result<Portfolio<F>, PortfolioError> {
    if runs.is_empty() {
        return Err(PortfolioError::NoRuns);
    }
    if tickers.is_empty() {
        return Err(PortfolioError::EmptyTickers);
    }
    let model_id = runs[0].model_id.clone();
    let sector_name = runs[0].sector_name.clone();
    let mut acc = vec![F::zero(); tickers.len()];
    let mut used = 0usize;
    for run in runs {
        match normalized_run_weights::<F>(run, tickers) {
            Some(normalized) => {
                for (a, w) in acc.iter_mut().zip(normalized) {
                    *a = *a + w;
                }
                used += 1;
            }
            None => log::warn!(
                "{model_id}/{sector_name} run {} assigns zero total weight; skipped",
                run.run_index
            ),
        }
    }
    if used == 0 {
        return Err(PortfolioError::AllZero);
    }
    let count = F::of_usize(used);
    for a in &mut acc {
        *a = *a / count;
    }
    let total = crate::num::sum2(&acc);
    for a in &mut acc {
        *a = *a / total;
    }
    Portfolio::new(
        PortfolioKind::LlmWeighted,
        &model_id,
        &sector_name,
        tickers.to_vec(),
        acc,
    )
}

/// Assign `1/n` to every ticker.
pub fn equal_weight<F: Scalar>(
    model_id: &str,
    sector_name: &str,
    tickers: &[Symbol],
) -> Result<Portfolio<F>, PortfolioError> {
    if tickers.is_empty() {
        return Err(PortfolioError::EmptyTickers);
    }
    let w = F::one() / F::of_usize(tickers.len());
    Portfolio::new(
        PortfolioKind::EqualWeighted,
        model_id,
        sector_name,
        tickers.to_vec(),
        vec![w; tickers.len()],
    )
}

/// Herfindahl-Hirschman index: the sum of squared weights, in [1/n, 1].
/// Computed with a compensated dot product, so the result is the
/// correctly rounded value of the exact sum.
pub fn hhi<F: Scalar>(p: &Portfolio<F>) -> F {
    dot2(p.weights(), p.weights())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn syms(list: &[&str]) -> Vec<Symbol> {
        list.iter().map(|s| Symbol::new(s)).collect()
    }

    fn wrun(idx: u32, entries: &[(&str, f64)]) -> WeightingRun {
        WeightingRun {
            model_id: "m".into(),
            sector_name: "Energy".into(),
            run_index: idx,
            weights: entries
                .iter()
                .map(|(s, w)| (Symbol::new(s), *w))
                .collect::<BTreeMap<_, _>>(),
            rationale_text: String::new(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn equal_weight_cases() {
        let p20: Portfolio<f64> =
            equal_weight("m", "s", &(0..20).map(|i| Symbol::new(&format!("T{i}"))).collect::<Vec<_>>())
                .unwrap();
        assert!(p20.weights().iter().all(|&w| w == 0.05));

        let p1: Portfolio<f64> = equal_weight("m", "s", &syms(&["A"])).unwrap();
        assert_eq!(p1.weights(), &[1.0]);

        let p15: Portfolio<f64> =
            equal_weight("m", "s", &(0..15).map(|i| Symbol::new(&format!("T{i}"))).collect::<Vec<_>>())
                .unwrap();
        assert!(p15.weights().iter().all(|&w| w == 1.0 / 15.0));
    }

    #[test]
    fn weight_bounds_formula() {
        let b: WeightBounds<f64> = weight_bounds(20).unwrap();
        assert_eq!(b.lower, 0.025);
        assert_eq!(b.upper, 0.10);

        let b15: WeightBounds<f64> = weight_bounds(15).unwrap();
        assert_eq!(b15.lower, 1.0 / 30.0);
        assert_eq!(b15.upper, 2.0 / 15.0);

        assert!(matches!(
            weight_bounds::<f64>(1),
            Err(PortfolioError::DegenerateUniverse(1))
        ));
    }

    #[test]
    fn hhi_cases() {
        let p20: Portfolio<f64> =
            equal_weight("m", "s", &(0..20).map(|i| Symbol::new(&format!("T{i}"))).collect::<Vec<_>>())
                .unwrap();
        assert_eq!(hhi(&p20), 0.05);

        let single: Portfolio<f64> = equal_weight("m", "s", &syms(&["A"])).unwrap();
        assert_eq!(hhi(&single), 1.0);

        let half = Portfolio::new(
            PortfolioKind::LlmWeighted,
            "m",
            "s",
            syms(&["A", "B"]),
            vec![0.5f64, 0.5],
        )
        .unwrap();
        assert_eq!(hhi(&half), 0.5);
    }

    #[test]
    fn average_weights_identity() {
        let runs = vec![wrun(1, &[("A", 0.5), ("B", 0.5)])];
        let p: Portfolio<f64> = average_weights(&runs, &syms(&["A", "B"])).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn average_weights_symmetry() {
        let runs = vec![wrun(1, &[("A", 1.0)]), wrun(2, &[("B", 1.0)])];
        let p: Portfolio<f64> = average_weights(&runs, &syms(&["A", "B"])).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn average_weights_two_run_mean() {
        // hand-computed: both runs already normalized;
        // mean of (0.6, 0.4) and (0.2, 0.8) is (0.4, 0.6)
        let runs = vec![
            wrun(1, &[("A", 0.6), ("B", 0.4)]),
            wrun(2, &[("A", 0.2), ("B", 0.8)]),
        ];
        let p: Portfolio<f64> = average_weights(&runs, &syms(&["A", "B"])).unwrap();
        assert!((p.weights()[0] - 0.4).abs() < 1e-15);
        assert!((p.weights()[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn average_weights_normalizes_raw_runs() {
        // raw weights 2:2 and 1:3 normalize to (0.5,0.5) and (0.25,0.75)
        let runs = vec![
            wrun(1, &[("A", 2.0), ("B", 2.0)]),
            wrun(2, &[("A", 1.0), ("B", 3.0)]),
        ];
        let p: Portfolio<f64> = average_weights(&runs, &syms(&["A", "B"])).unwrap();
        assert!((p.weights()[0] - 0.375).abs() < 1e-15);
        assert!((p.weights()[1] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn average_weights_all_zero_errors() {
        let runs = vec![wrun(1, &[("A", 0.0)])];
        assert!(matches!(
            average_weights::<f64>(&runs, &syms(&["A", "B"])),
            Err(PortfolioError::AllZero)
        ));
    }

    #[test]
    fn average_weights_order_invariant() {
        let a = wrun(1, &[("A", 0.7), ("B", 0.3)]);
        let b = wrun(2, &[("A", 0.1), ("B", 0.9)]);
        let fwd: Portfolio<f64> =
            average_weights(&[a.clone(), b.clone()], &syms(&["A", "B"])).unwrap();
        let rev: Portfolio<f64> = average_weights(&[b, a], &syms(&["A", "B"])).unwrap();
        assert_eq!(fwd.weights(), rev.weights());
    }

    #[test]
    fn portfolio_rejects_bad_inputs() {
        assert!(matches!(
            Portfolio::<f64>::new(PortfolioKind::LlmWeighted, "m", "s", syms(&["A", "A"]), vec![0.5, 0.5]),
            Err(PortfolioError::DuplicateTicker(_))
        ));
        assert!(matches!(
            Portfolio::<f64>::new(PortfolioKind::LlmWeighted, "m", "s", syms(&["A", "B"]), vec![0.9, 0.3]),
            Err(PortfolioError::NotNormalized(_))
        ));
        assert!(matches!(
            Portfolio::<f64>::new(PortfolioKind::LlmWeighted, "m", "s", syms(&["A", "B"]), vec![1.5, -0.5]),
            Err(PortfolioError::NegativeWeight { .. })
        ));
    }
}
