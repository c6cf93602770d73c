//! Sector constituent registries and aggregation of repeated LLM stock
//! selections into a trading universe.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbol::Symbol;

#[derive(Debug, Error)]
pub enum UniverseError {
    #[error("registry {0} cannot be read: {1}")]
    Io(String, String),
    #[error("registry row {line}: {reason}")]
    MalformedRegistry { line: u64, reason: String },
    #[error("sector {0} has inconsistent index tickers ({1} vs {2})")]
    InconsistentIndexTicker(String, Symbol, Symbol),
    #[error("index ticker {0} is shared by sectors {1} and {2}")]
    DuplicateIndexTicker(Symbol, String, String),
    #[error("unknown sector {0}")]
    UnknownSector(String),
    #[error("selection runs mix (model, sector) pairs")]
    MixedRuns,
    #[error("no selection runs supplied")]
    NoRuns,
    #[error("portfolio size k must be >= 1, got {0}")]
    InvalidK(usize),
    #[error(
        "universe for {model_id}/{sector_name} has only {got} valid candidates, fewer than k = {k}"
    )]
    UniverseTooSmall {
        model_id: String,
        sector_name: String,
        got: usize,
        k: usize,
        /// Complete aggregate over the candidates that do exist, so the
        /// caller can proceed with the smaller universe.
        selection: Box<UniverseSelection>,
    },
}

/// One sector index: name, index ticker, and constituent set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorSpec {
    pub sector_name: String,
    pub index_ticker: Symbol,
    pub constituents: BTreeSet<Symbol>,
}

impl SectorSpec {
    pub fn constituent_count(&self) -> usize {
        self.constituents.len()
    }
}

/// One repetition of the stock-selection prompt pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRun {
    pub model_id: String,
    pub sector_name: String,
    pub run_index: u32,
    pub raw_tickers: Vec<Symbol>,
    pub rationale_text: String,
}

/// Aggregated trading universe for one (model, sector) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseSelection {
    pub model_id: String,
    pub sector_name: String,
    /// Top-k valid tickers by (mention count desc, symbol asc).
    pub chosen: Vec<Symbol>,
    /// Proposed tickers not in the sector's constituent set.
    pub false_stocks: BTreeSet<Symbol>,
    /// Valid constituents excluded for incomplete price history.
    pub unpriced: BTreeSet<Symbol>,
    /// Mention counts over valid tickers (one count per run).
    pub frequency: BTreeMap<Symbol, u32>,
    /// Distinct valid candidates before truncation to k.
    pub universe_size: usize,
}

impl UniverseSelection {
    /// The (universe size, false-stock count) pair.
    pub fn stats(&self) -> (usize, usize) {
        (self.universe_size, self.false_stocks.len())
    }
}

/// Split proposed tickers into valid / false / unpriced, deduplicated,
/// preserving input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validation {
    pub valid: Vec<Symbol>,
    pub false_stocks: Vec<Symbol>,
    pub unpriced: Vec<Symbol>,
}

pub fn validate_tickers(
    candidates: &[Symbol],
    spec: &SectorSpec,
    price_coverage: &BTreeSet<Symbol>,
) -> Validation {
    let mut seen = BTreeSet::new();
    let mut out = Validation::default();
    for c in candidates {
        if !seen.insert(c.clone()) {
            continue;
        }
        if !spec.constituents.contains(c) {
            out.false_stocks.push(c.clone());
        } else if !price_coverage.contains(c) {
            out.unpriced.push(c.clone());
        } else {
            out.valid.push(c.clone());
        }
    }
    out
}

/// Tally mention counts across runs and keep the top-k valid tickers.
///
/// A ticker mentioned several times within one run counts once for that
/// run. Rank-k ties break by ascending symbol. When fewer than k distinct
/// valid candidates exist the complete aggregate is returned inside
/// [`UniverseError::UniverseTooSmall`] so the caller can proceed with the
/// smaller universe.
pub fn aggregate_selection(
    runs: &[SelectionRun],
    spec: &SectorSpec,
    price_coverage: &BTreeSet<Symbol>,
    k: usize,
) -> Result<UniverseSelection, UniverseError> {
    if runs.is_empty() {
        return Err(UniverseError::NoRuns);
    }
    if k < 1 {
        return Err(UniverseError::InvalidK(k));
    }
    let model_id = runs[0].model_id.clone();
    let sector_name = runs[0].sector_name.clone();
    if runs
        .iter()
        .any(|r| r.model_id != model_id || r.sector_name != sector_name)
    {
        return Err(UniverseError::MixedRuns);
    }
    let mut frequency: BTreeMap<Symbol, u32> = BTreeMap::new();
    let mut false_stocks = BTreeSet::new();
    let mut unpriced = BTreeSet::new();
    for run in runs {
        let v = validate_tickers(&run.raw_tickers, spec, price_coverage);
        for t in v.valid {
            *frequency.entry(t).or_insert(0) += 1;
        }
        false_stocks.extend(v.false_stocks);
        unpriced.extend(v.unpriced);
    }
    let mut ranked: Vec<(Symbol, u32)> = frequency
        .iter()
        .map(|(s, c)| (s.clone(), *c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let universe_size = ranked.len();
    let chosen: Vec<Symbol> = ranked.into_iter().take(k).map(|(s, _)| s).collect();
    let selection = UniverseSelection {
        model_id: model_id.clone(),
        sector_name: sector_name.clone(),
        chosen,
        false_stocks,
        unpriced,
        frequency,
        universe_size,
    };
    if universe_size < k {
        return Err(UniverseError::UniverseTooSmall {
            model_id,
            sector_name,
            got: universe_size,
            k,
            selection: Box::new(selection),
        });
    }
    Ok(selection)
}

#[derive(Debug, Deserialize)]
struct RegistryRow {
    sector_name: String,
    index_ticker: String,
    constituent: String,
}

/// Load a sector registry CSV (`sector_name,index_ticker,constituent`,
/// one row per constituent) into per-sector specs keyed by sector name.
pub fn load_registry(path: &Path) -> Result<BTreeMap<String, SectorSpec>, UniverseError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| UniverseError::Io(path.display().to_string(), e.to_string()))?;
    let mut sectors: BTreeMap<String, SectorSpec> = BTreeMap::new();
    for (idx, rec) in rdr.deserialize::<RegistryRow>().enumerate() {
        let line = idx as u64 + 2;
        let row = rec.map_err(|e| UniverseError::MalformedRegistry {
            line,
            reason: e.to_string(),
        })?;
        let name = row.sector_name.trim().to_string();
        let index_ticker = Symbol::new(&row.index_ticker);
        let constituent = Symbol::new(&row.constituent);
        if name.is_empty() || index_ticker.is_empty() || constituent.is_empty() {
            return Err(UniverseError::MalformedRegistry {
                line,
                reason: "empty field".to_string(),
            });
        }
        match sectors.get_mut(&name) {
            Some(spec) => {
                if spec.index_ticker != index_ticker {
                    return Err(UniverseError::InconsistentIndexTicker(
                        name,
                        spec.index_ticker.clone(),
                        index_ticker,
                    ));
                }
                spec.constituents.insert(constituent);
            }
            None => {
                sectors.insert(
                    name.clone(),
                    SectorSpec {
                        sector_name: name,
                        index_ticker,
                        constituents: BTreeSet::from([constituent]),
                    },
                );
            }
        }
    }
    let mut seen: BTreeMap<Symbol, String> = BTreeMap::new();
    for spec in sectors.values() {
        if let Some(other) = seen.insert(spec.index_ticker.clone(), spec.sector_name.clone()) {
            return Err(UniverseError::DuplicateIndexTicker(
                spec.index_ticker.clone(),
                other,
                spec.sector_name.clone(),
            ));
        }
    }
    Ok(sectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms(list: &[&str]) -> Vec<Symbol> {
        list.iter().map(|s| Symbol::new(s)).collect()
    }

    fn sector(constituents: &[&str]) -> SectorSpec {
        SectorSpec {
            sector_name: "Industrials".to_string(),
            index_ticker: Symbol::new("S&P 500-20"),
            constituents: constituents.iter().map(|s| Symbol::new(s)).collect(),
        }
    }

    fn run(idx: u32, tickers: &[&str]) -> SelectionRun {
        SelectionRun {
            model_id: "m".to_string(),
            sector_name: "Industrials".to_string(),
            run_index: idx,
            raw_tickers: syms(tickers),
            rationale_text: String::new(),
        }
    }

    fn coverage(list: &[&str]) -> BTreeSet<Symbol> {
        list.iter().map(|s| Symbol::new(s)).collect()
    }

    #[test]
    fn validate_accepts_priced_constituents() {
        let spec = sector(&["GE", "CAT", "MMM"]);
        let cov = coverage(&["GE", "CAT", "MMM"]);
        let v = validate_tickers(&syms(&["GE", "CAT"]), &spec, &cov);
        assert_eq!(v.valid, syms(&["GE", "CAT"]));
        assert!(v.false_stocks.is_empty());
        assert!(v.unpriced.is_empty());
    }

    #[test]
    fn validate_rejects_foreign_ticker() {
        let spec = sector(&["GE"]);
        let cov = coverage(&["GE"]);
        let v = validate_tickers(&syms(&["XYZQ"]), &spec, &cov);
        assert_eq!(v.false_stocks, syms(&["XYZQ"]));
        assert!(v.valid.is_empty());
    }

    #[test]
    fn validate_splits_unpriced() {
        let spec = sector(&["GE", "CAT"]);
        let cov = coverage(&["GE"]);
        let v = validate_tickers(&syms(&["GE", "CAT"]), &spec, &cov);
        assert_eq!(v.valid, syms(&["GE"]));
        assert_eq!(v.unpriced, syms(&["CAT"]));
        assert!(v.false_stocks.is_empty());
    }

    #[test]
    fn validate_is_idempotent() {
        let spec = sector(&["GE", "CAT", "MMM"]);
        let cov = coverage(&["GE", "CAT", "MMM"]);
        let first = validate_tickers(&syms(&["MMM", "GE", "GE", "FAKE"]), &spec, &cov);
        let again = validate_tickers(&first.valid, &spec, &cov);
        assert_eq!(again.valid, first.valid);
        assert!(again.false_stocks.is_empty());
        assert!(again.unpriced.is_empty());
    }

    #[test]
    fn unanimous_runs_keep_counts() {
        let names: Vec<String> = (0..20).map(|i| format!("T{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let spec = sector(&refs);
        let cov = coverage(&refs);
        let runs: Vec<SelectionRun> = (1..=10).map(|i| run(i, &refs)).collect();
        let u = aggregate_selection(&runs, &spec, &cov, 20).unwrap();
        assert_eq!(u.chosen.len(), 20);
        assert!(u.frequency.values().all(|&c| c == 10));
        assert_eq!(u.universe_size, 20);
    }

    #[test]
    fn frequency_cutoff_excludes_rank_21() {
        // A..T mentioned 3 times, U mentioned twice
        let top: Vec<String> = (0..20).map(|i| format!("S{i:02}")).collect();
        let mut all: Vec<&str> = top.iter().map(String::as_str).collect();
        all.push("U");
        let spec = sector(&all);
        let cov = coverage(&all);
        let top_refs: Vec<&str> = top.iter().map(String::as_str).collect();
        let runs = vec![run(1, &all), run(2, &all), run(3, &top_refs)];
        // U appears in runs 1-2 only => count 2; others count 3
        let u = aggregate_selection(&runs, &spec, &cov, 20).unwrap();
        assert_eq!(u.universe_size, 21);
        assert!(!u.chosen.contains(&Symbol::new("U")));
        assert_eq!(u.frequency[&Symbol::new("U")], 2);
    }

    #[test]
    fn rank_k_tie_breaks_lexicographically() {
        // hand tally over 3 runs:
        //   AAA: runs 1,2,3 -> 3     BBB: runs 1,2,3 -> 3
        //   MMM: run 1 -> 1          PH: run 2 -> 1
        // k = 3: AAA(3), BBB(3), then tie MMM/PH at count 1 -> MMM wins
        let spec = sector(&["AAA", "BBB", "MMM", "PH"]);
        let cov = coverage(&["AAA", "BBB", "MMM", "PH"]);
        let runs = vec![
            run(1, &["AAA", "BBB", "MMM"]),
            run(2, &["AAA", "BBB", "PH"]),
            run(3, &["AAA", "BBB"]),
        ];
        let u = aggregate_selection(&runs, &spec, &cov, 3).unwrap();
        assert_eq!(u.chosen, syms(&["AAA", "BBB", "MMM"]));
    }

    #[test]
    fn duplicate_mentions_in_one_run_count_once() {
        let spec = sector(&["GE", "CAT"]);
        let cov = coverage(&["GE", "CAT"]);
        let runs = vec![run(1, &["GE", "GE", "GE", "CAT"])];
        let u = aggregate_selection(&runs, &spec, &cov, 2).unwrap();
        assert_eq!(u.frequency[&Symbol::new("GE")], 1);
    }

    #[test]
    fn too_small_universe_returns_partial_selection() {
        let spec = sector(&["GE", "CAT"]);
        let cov = coverage(&["GE", "CAT"]);
        let runs = vec![run(1, &["GE", "CAT", "FAKE"])];
        let err = aggregate_selection(&runs, &spec, &cov, 5).unwrap_err();
        match err {
            UniverseError::UniverseTooSmall { got, selection, .. } => {
                assert_eq!(got, 2);
                assert_eq!(selection.chosen.len(), 2);
                assert_eq!(selection.false_stocks, coverage(&["FAKE"]));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn increasing_k_is_monotone() {
        let spec = sector(&["A", "B", "C", "D", "E"]);
        let cov = coverage(&["A", "B", "C", "D", "E"]);
        let runs = vec![
            run(1, &["A", "B", "C", "D", "E"]),
            run(2, &["A", "B", "C"]),
            run(3, &["A", "B"]),
        ];
        let u3 = aggregate_selection(&runs, &spec, &cov, 3).unwrap();
        let u5 = aggregate_selection(&runs, &spec, &cov, 5).unwrap();
        for t in &u3.chosen {
            assert!(u5.chosen.contains(t));
        }
    }

    #[test]
    fn stats_reproduce_size_false_pair() {
        // fixture sized to the Energy cell: 31 valid candidates, 11 false
        let valid_names: Vec<String> = (0..31).map(|i| format!("V{i:02}")).collect();
        let false_names: Vec<String> = (0..11).map(|i| format!("F{i:02}")).collect();
        let valid_refs: Vec<&str> = valid_names.iter().map(String::as_str).collect();
        let spec = sector(&valid_refs);
        let cov = coverage(&valid_refs);
        let mut proposal: Vec<&str> = valid_refs.clone();
        proposal.extend(false_names.iter().map(String::as_str));
        let runs = vec![run(1, &proposal)];
        let u = aggregate_selection(&runs, &spec, &cov, 20).unwrap();
        assert_eq!(u.stats(), (31, 11));

        // no rejections -> false count 0
        let clean = aggregate_selection(&[run(1, &valid_refs[..23])], &spec, &cov, 20).unwrap();
        assert_eq!(clean.stats(), (23, 0));
    }
}
