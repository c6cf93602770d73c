//! Stage orchestration: select -> weight -> build -> optimize ->
//! backtest -> diagnose -> report, across every (model, sector) cell.
//!
//! Each stage persists its outputs under the run directory so later
//! stages can rerun without re-querying providers. Failures isolate to
//! their cell; sibling cells always complete.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sectorfolio_core::backtest::{
    classify, evaluate_series, per_period_rf, BacktestResult, MetricBasis, Outcome, PortfolioRef,
    SeriesKind,
};
use sectorfolio_core::diagnostics::{
    effective_rank, pca_components_for_threshold, weight_volatility, DiagnosticsReport,
};
use sectorfolio_core::linalg::Mat;
use sectorfolio_core::llm_gateway::{
    Gateway, GatewayMode, HttpTransport, Transport, WeightingRun,
};
use sectorfolio_core::marketdata::{
    alignment_flags, load_price_file, to_returns, Alignment, PriceSeries, ReturnsMatrix,
    WindowLabel, WindowSpec,
};
use sectorfolio_core::optimizer::{estimate_moments, pick_portfolios, trace_frontier};
use sectorfolio_core::portfolio::{
    average_weights, equal_weight, hhi, weight_bounds, Portfolio, PortfolioKind,
};
use sectorfolio_core::stats::sample_covariance;
use sectorfolio_core::universe::{
    aggregate_selection, load_registry, SectorSpec, SelectionRun, UniverseError,
    UniverseSelection,
};
use sectorfolio_core::{Real, Symbol};

use crate::config::{ModelConfig, RunConfig};
use crate::manifest::{sha256_hex, CellState, CellStatus, RunManifest};
use crate::reports;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage input missing: {0} (run the earlier stages first)")]
    MissingStage(PathBuf),
    #[error("io error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("artifact {0} cannot be decoded: {1}")]
    Decode(PathBuf, String),
    #[error("report error: {0}")]
    Report(String),
}

/// Per-cell stage outcome persisted in stage artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord<T> {
    pub model_id: String,
    pub sector_name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<T> CellRecord<T> {
    fn ok(model_id: &str, sector: &str, value: T, warnings: Vec<String>) -> Self {
        CellRecord {
            model_id: model_id.to_string(),
            sector_name: sector.to_string(),
            value: Some(value),
            error: None,
            warnings,
        }
    }

    fn failed(model_id: &str, sector: &str, error: String) -> Self {
        CellRecord {
            model_id: model_id.to_string(),
            sector_name: sector.to_string(),
            value: None,
            error: Some(error),
            warnings: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub window: WindowLabel,
    pub basis: MetricBasis,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBacktests {
    pub results: Vec<BacktestResult<Real>>,
    pub classifications: Vec<ClassificationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestArtifact {
    pub cells: Vec<CellRecord<CellBacktests>>,
    /// Index results per sector, shared by every model of that sector.
    pub index: BTreeMap<String, Vec<BacktestResult<Real>>>,
}

pub const SELECTIONS_FILE: &str = "selections.json";
pub const UNIVERSES_FILE: &str = "universes.json";
pub const WEIGHTING_FILE: &str = "weighting_runs.json";
pub const PORTFOLIOS_BASE_FILE: &str = "portfolios_base.json";
pub const PORTFOLIOS_FILE: &str = "portfolios.json";
pub const BACKTESTS_FILE: &str = "backtests.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIGESTS_FILE: &str = "digests.txt";

/// Market inputs shared by the numeric stages.
pub struct MarketContext {
    pub registry: BTreeMap<String, SectorSpec>,
    pub prices: BTreeMap<Symbol, PriceSeries>,
    /// Index price-file symbol per configured sector.
    pub index_symbols: BTreeMap<String, Symbol>,
    /// Tickers with a complete series against the sector's index grid.
    pub coverage: BTreeMap<String, BTreeSet<Symbol>>,
}

impl MarketContext {
    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        let registry = load_registry(&config.registry_path)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        for sector in &config.sectors {
            if !registry.contains_key(sector) {
                return Err(PipelineError::Data(format!(
                    "sector {sector} is not in the registry"
                )));
            }
        }
        let span = config.full_span();
        let prices = load_price_file(&config.prices_path, Some(span))
            .map_err(|e| PipelineError::Data(e.to_string()))?;

        let mut index_symbols = BTreeMap::new();
        let mut coverage = BTreeMap::new();
        for sector in &config.sectors {
            let spec = &registry[sector];
            let index_symbol = config.index_symbol(sector, &spec.index_ticker);
            let index_series = prices.get(&index_symbol).ok_or_else(|| {
                PipelineError::Data(format!(
                    "no price history for index symbol {index_symbol} of sector {sector}"
                ))
            })?;
            let reference: BTreeSet<_> = index_series.dates().collect();
            let covered: BTreeSet<Symbol> = spec
                .constituents
                .iter()
                .filter(|t| {
                    prices.get(*t).is_some_and(|s| {
                        let own: BTreeSet<_> = s.dates().collect();
                        reference.is_subset(&own)
                    })
                })
                .cloned()
                .collect();
            index_symbols.insert(sector.clone(), index_symbol);
            coverage.insert(sector.clone(), covered);
        }
        Ok(MarketContext {
            registry,
            prices,
            index_symbols,
            coverage,
        })
    }

    /// Returns matrix over the chosen tickers plus the sector index
    /// column, on their common date grid.
    pub fn cell_matrix(
        &self,
        sector: &str,
        chosen: &[Symbol],
    ) -> Result<ReturnsMatrix<Real>, String> {
        let index_symbol = &self.index_symbols[sector];
        if chosen.contains(index_symbol) {
            return Err(format!(
                "index symbol {index_symbol} collides with a chosen ticker"
            ));
        }
        let mut series: Vec<PriceSeries> = Vec::with_capacity(chosen.len() + 1);
        for t in chosen {
            series.push(
                self.prices
                    .get(t)
                    .cloned()
                    .ok_or_else(|| format!("no price history for {t}"))?,
            );
        }
        series.push(self.prices[index_symbol].clone());
        to_returns(&series, Alignment::Intersect).map_err(|e| e.to_string())
    }

    pub fn chosen_series(&self, chosen: &[Symbol]) -> Vec<PriceSeries> {
        chosen
            .iter()
            .filter_map(|t| self.prices.get(t).cloned())
            .collect()
    }
}

/// The pipeline driver: configuration plus per-model transports.
pub struct Pipeline {
    config: RunConfig,
    transports: BTreeMap<String, Arc<dyn Transport>>,
}

impl Pipeline {
    /// Build transports from the configuration (HTTP in live/record
    /// modes; none needed for replay).
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        let mut transports: BTreeMap<String, Arc<dyn Transport>> = BTreeMap::new();
        if matches!(config.mode, GatewayMode::Live | GatewayMode::Record) {
            for model in &config.models {
                let transport = HttpTransport::new(&model.provider)
                    .map_err(|e| PipelineError::Data(e.to_string()))?;
                transports.insert(model.model_id.clone(), Arc::new(transport));
            }
        }
        Ok(Pipeline { config, transports })
    }

    /// Inject transports (tests, fixture generation).
    pub fn with_transports(
        config: RunConfig,
        transports: BTreeMap<String, Arc<dyn Transport>>,
    ) -> Self {
        Pipeline { config, transports }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn cells(&self) -> Vec<(ModelConfig, String)> {
        let mut cells = Vec::new();
        for model in &self.config.models {
            for sector in &self.config.sectors {
                cells.push((model.clone(), sector.clone()));
            }
        }
        cells
    }

    /// Per-cell gateway. In record mode, `append` continues the cell's
    /// cassette (used by stages after the first recording stage) instead
    /// of truncating it.
    fn gateway(&self, model: &ModelConfig, sector: &str, append: bool) -> Result<Gateway, String> {
        let cassette = self.config.cassette_path(&model.model_id, sector);
        match self.config.mode {
            GatewayMode::Replay => Gateway::replay(
                &model.model_id,
                model.provider.clone(),
                cassette.as_deref().expect("validated by config"),
            )
            .map_err(|e| e.to_string()),
            mode => {
                let transport = self
                    .transports
                    .get(&model.model_id)
                    .cloned()
                    .ok_or_else(|| format!("no transport for model {}", model.model_id))?;
                if mode == GatewayMode::Record {
                    let path = cassette.as_deref().expect("validated by config");
                    if append {
                        return Gateway::record_append(
                            &model.model_id,
                            model.provider.clone(),
                            transport,
                            path,
                        )
                        .map_err(|e| e.to_string());
                    }
                    return Gateway::new(
                        &model.model_id,
                        model.provider.clone(),
                        mode,
                        Some(transport),
                        Some(path),
                    )
                    .map_err(|e| e.to_string());
                }
                Gateway::new(&model.model_id, model.provider.clone(), mode, Some(transport), None)
                    .map_err(|e| e.to_string())
            }
        }
    }

    /// Run every stage in order and emit reports.
    pub fn run(&self, out_dir: &Path) -> Result<RunManifest, PipelineError> {
        self.select(out_dir)?;
        self.weight(out_dir)?;
        self.build(out_dir)?;
        self.optimize(out_dir)?;
        self.backtest(out_dir)?;
        self.diagnose(out_dir)?;
        self.report(out_dir)
    }

    /// Selection rounds, validation, and aggregation into universes.
    pub fn select(&self, out_dir: &Path) -> Result<StageSummary, PipelineError> {
        std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Io(out_dir.into(), e))?;
        let market = MarketContext::load(&self.config)?;
        let cells = self.cells();
        let outcomes: Vec<(
            CellRecord<Vec<SelectionRun>>,
            CellRecord<UniverseSelection>,
        )> = cells
            .par_iter()
            .map(|(model, sector)| self.select_cell(&market, model, sector))
            .collect();
        let (selections, universes): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
        write_json(out_dir, SELECTIONS_FILE, &selections)?;
        write_json(out_dir, UNIVERSES_FILE, &universes)?;
        Ok(summarize(&universes))
    }

    fn select_cell(
        &self,
        market: &MarketContext,
        model: &ModelConfig,
        sector: &str,
    ) -> (
        CellRecord<Vec<SelectionRun>>,
        CellRecord<UniverseSelection>,
    ) {
        let id = &model.model_id;
        let fail = |e: String| {
            (
                CellRecord::failed(id, sector, e.clone()),
                CellRecord::failed(id, sector, e),
            )
        };
        let spec = &market.registry[sector];
        let gateway = match self.gateway(model, sector, false) {
            Ok(g) => g,
            Err(e) => return fail(e),
        };
        let runs = match gateway.run_selection_round(
            spec,
            self.config.k,
            self.config.selection_repeats,
        ) {
            Ok(r) => r,
            Err(e) => return fail(e.to_string()),
        };
        let mut warnings = Vec::new();
        let universe = match aggregate_selection(
            &runs,
            spec,
            &market.coverage[sector],
            self.config.k,
        ) {
            Ok(u) => u,
            Err(UniverseError::UniverseTooSmall {
                got, k, selection, ..
            }) => {
                warnings.push(format!(
                    "universe has {got} valid candidates, fewer than k = {k}; proceeding with {got}"
                ));
                *selection
            }
            Err(e) => return fail(e.to_string()),
        };
        if universe.chosen.len() < 2 {
            return fail(format!(
                "universe of {} valid candidates cannot support optimization",
                universe.chosen.len()
            ));
        }
        if !universe.unpriced.is_empty() {
            warnings.push(format!(
                "excluded for incomplete price history: {}",
                universe
                    .unpriced
                    .iter()
                    .map(Symbol::as_str)
                    .collect::<Vec<_>>()
                    .join(" ")
            ));
        }
        (
            CellRecord::ok(id, sector, runs, Vec::new()),
            CellRecord::ok(id, sector, universe, warnings),
        )
    }

    /// Weighting rounds over each cell's chosen universe.
    pub fn weight(&self, out_dir: &Path) -> Result<StageSummary, PipelineError> {
        let registry = load_registry(&self.config.registry_path)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        let universes: Vec<CellRecord<UniverseSelection>> =
            read_json(out_dir, UNIVERSES_FILE)?;
        let by_cell = index_records(&universes);
        let cells = self.cells();
        let records: Vec<CellRecord<Vec<WeightingRun>>> = cells
            .par_iter()
            .map(|(model, sector)| {
                let id = &model.model_id;
                let universe = match lookup(&by_cell, id, sector) {
                    Ok(u) => u,
                    Err(e) => return CellRecord::failed(id, sector, e),
                };
                let spec = match registry.get(sector) {
                    Some(s) => s,
                    None => return CellRecord::failed(id, sector, format!("unknown sector {sector}")),
                };
                let gateway = match self.gateway(model, sector, true) {
                    Ok(g) => g,
                    Err(e) => return CellRecord::failed(id, sector, e),
                };
                match gateway.run_weighting_round(
                    spec,
                    &universe.chosen,
                    self.config.weighting_repeats,
                ) {
                    Ok(runs) => {
                        let warnings: Vec<String> =
                            runs.iter().flat_map(|r| r.warnings.clone()).collect();
                        CellRecord::ok(id, sector, runs, warnings)
                    }
                    Err(e) => CellRecord::failed(id, sector, e.to_string()),
                }
            })
            .collect();
        write_json(out_dir, WEIGHTING_FILE, &records)?;
        Ok(summarize(&records))
    }

    /// LLM-weighted and equal-weighted portfolios.
    pub fn build(&self, out_dir: &Path) -> Result<StageSummary, PipelineError> {
        let universes: Vec<CellRecord<UniverseSelection>> =
            read_json(out_dir, UNIVERSES_FILE)?;
        let weighting: Vec<CellRecord<Vec<WeightingRun>>> = read_json(out_dir, WEIGHTING_FILE)?;
        let u_by_cell = index_records(&universes);
        let w_by_cell = index_records(&weighting);
        let records: Vec<CellRecord<Vec<Portfolio<Real>>>> = self
            .cells()
            .par_iter()
            .map(|(model, sector)| {
                let id = &model.model_id;
                let assemble = || -> Result<Vec<Portfolio<Real>>, String> {
                    let universe = lookup(&u_by_cell, id, sector)?;
                    let runs = lookup(&w_by_cell, id, sector)?;
                    let llm = average_weights::<Real>(runs, &universe.chosen)
                        .map_err(|e| e.to_string())?;
                    let equal =
                        equal_weight::<Real>(id, sector, &universe.chosen).map_err(|e| e.to_string())?;
                    Ok(vec![llm, equal])
                };
                match assemble() {
                    Ok(v) => CellRecord::ok(id, sector, v, Vec::new()),
                    Err(e) => CellRecord::failed(id, sector, e),
                }
            })
            .collect();
        write_json(out_dir, PORTFOLIOS_BASE_FILE, &records)?;
        Ok(summarize(&records))
    }

    /// Moments, frontier, and the three optimized portfolios.
    pub fn optimize(&self, out_dir: &Path) -> Result<StageSummary, PipelineError> {
        let market = MarketContext::load(&self.config)?;
        let universes: Vec<CellRecord<UniverseSelection>> =
            read_json(out_dir, UNIVERSES_FILE)?;
        let base: Vec<CellRecord<Vec<Portfolio<Real>>>> =
            read_json(out_dir, PORTFOLIOS_BASE_FILE)?;
        let u_by_cell = index_records(&universes);
        let b_by_cell = index_records(&base);
        let in_sample = self.in_sample_window();
        let rf_pp = per_period_rf(self.config.rf_annual, self.config.periods_per_year);

        let frontier_dir = out_dir.join("frontiers");
        std::fs::create_dir_all(&frontier_dir)
            .map_err(|e| PipelineError::Io(frontier_dir.clone(), e))?;

        let records: Vec<CellRecord<Vec<Portfolio<Real>>>> = self
            .cells()
            .par_iter()
            .map(|(model, sector)| {
                let id = &model.model_id;
                let mut warnings = Vec::new();
                let compute = |warnings: &mut Vec<String>| -> Result<Vec<Portfolio<Real>>, String> {
                    let universe = lookup(&u_by_cell, id, sector)?;
                    let mut portfolios = lookup(&b_by_cell, id, sector)?.clone();
                    let chosen = &universe.chosen;
                    let cell_matrix = market.cell_matrix(sector, chosen)?;
                    let flagged = alignment_flags(
                        &market.chosen_series(chosen),
                        &in_sample.range,
                        self.config.max_alignment_loss,
                    );
                    if !flagged.is_empty() {
                        warnings.push(format!(
                            "alignment drops more than {:.0}% of in-sample rows for: {}",
                            self.config.max_alignment_loss * 100.0,
                            flagged
                                .iter()
                                .map(Symbol::as_str)
                                .collect::<Vec<_>>()
                                .join(" ")
                        ));
                    }
                    let stock_matrix =
                        cell_matrix.select_tickers(chosen).map_err(|e| e.to_string())?;
                    let insample_matrix = stock_matrix
                        .slice_window(&in_sample)
                        .map_err(|e| e.to_string())?;
                    let moments = estimate_moments(&insample_matrix).map_err(|e| e.to_string())?;
                    if let Some(delta) = moments.ridge {
                        warnings.push(format!(
                            "covariance ridge {delta:e} applied to restore positive semidefiniteness"
                        ));
                    }
                    if moments.underdetermined {
                        warnings.push(format!(
                            "in-sample rows {} < assets + 1 = {}; covariance is rank-deficient",
                            insample_matrix.periods(),
                            chosen.len() + 1
                        ));
                    }
                    let bounds = weight_bounds::<Real>(chosen.len()).map_err(|e| e.to_string())?;
                    let frontier =
                        trace_frontier(&moments, &bounds, self.config.frontier_points, rf_pp)
                            .map_err(|e| e.to_string())?;
                    let (mvp, merp, msrp) =
                        pick_portfolios(&frontier, id, sector).map_err(|e| e.to_string())?;
                    portfolios.extend([mvp, merp, msrp]);
                    reports::write_frontier_csvs(&frontier_dir, id, sector, &frontier)
                        .map_err(|e| e.to_string())?;
                    Ok(portfolios)
                };
                match compute(&mut warnings) {
                    Ok(portfolios) => CellRecord::ok(id, sector, portfolios, warnings),
                    Err(e) => CellRecord::failed(id, sector, e),
                }
            })
            .collect();
        write_json(out_dir, PORTFOLIOS_FILE, &records)?;
        reports::write_portfolios_csv(out_dir, &records)
            .map_err(|e| PipelineError::Report(e.to_string()))?;
        Ok(summarize(&records))
    }

    /// Per-window performance of each portfolio and its sector index.
    pub fn backtest(&self, out_dir: &Path) -> Result<StageSummary, PipelineError> {
        let market = MarketContext::load(&self.config)?;
        let universes: Vec<CellRecord<UniverseSelection>> =
            read_json(out_dir, UNIVERSES_FILE)?;
        let portfolios: Vec<CellRecord<Vec<Portfolio<Real>>>> =
            read_json(out_dir, PORTFOLIOS_FILE)?;
        let u_by_cell = index_records(&universes);
        let p_by_cell = index_records(&portfolios);
        let rf = self.config.rf_annual;
        let ppy = self.config.periods_per_year;
        let mode = self.config.cumulative_mode;

        // index results once per sector
        let mut index_results: BTreeMap<String, Vec<BacktestResult<Real>>> = BTreeMap::new();
        for sector in &self.config.sectors {
            let index_symbol = &market.index_symbols[sector];
            let series = market.prices[index_symbol].clone();
            let matrix: ReturnsMatrix<Real> = to_returns(std::slice::from_ref(&series), Alignment::Intersect)
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            let mut results = Vec::new();
            for window in &self.config.windows {
                let sliced = matrix
                    .slice_window(window)
                    .map_err(|e| PipelineError::Data(e.to_string()))?;
                let index_series = sliced.column(0);
                let result = evaluate_series(
                    PortfolioRef {
                        kind: SeriesKind::Index,
                        model_id: "-".into(),
                        sector_name: sector.clone(),
                    },
                    window.label,
                    sliced.dates().to_vec(),
                    index_series,
                    None,
                    rf,
                    ppy,
                    mode,
                )
                .map_err(|e| PipelineError::Data(format!("index backtest {sector}: {e}")))?;
                results.push(result);
            }
            index_results.insert(sector.clone(), results);
        }

        let cells: Vec<CellRecord<CellBacktests>> = self
            .cells()
            .par_iter()
            .map(|(model, sector)| {
                let id = &model.model_id;
                let compute = || -> Result<CellBacktests, String> {
                    let universe = lookup(&u_by_cell, id, sector)?;
                    let five = lookup(&p_by_cell, id, sector)?;
                    let cell_matrix = market.cell_matrix(sector, &universe.chosen)?;
                    let index_symbol = &market.index_symbols[sector];
                    let index_col = cell_matrix
                        .column_index(index_symbol)
                        .ok_or_else(|| format!("index column {index_symbol} missing"))?;
                    let mut results = Vec::new();
                    let mut classifications = Vec::new();
                    for window in &self.config.windows {
                        let sliced =
                            cell_matrix.slice_window(window).map_err(|e| e.to_string())?;
                        let index_series = sliced.column(index_col);
                        let mut by_kind: BTreeMap<PortfolioKind, BacktestResult<Real>> =
                            BTreeMap::new();
                        for p in five {
                            let series = sectorfolio_core::backtest::portfolio_returns(
                                &sliced, p,
                            )
                            .map_err(|e| e.to_string())?;
                            let result = evaluate_series(
                                PortfolioRef {
                                    kind: SeriesKind::Portfolio(p.kind),
                                    model_id: id.clone(),
                                    sector_name: sector.clone(),
                                },
                                window.label,
                                sliced.dates().to_vec(),
                                series,
                                Some(&index_series),
                                rf,
                                ppy,
                                mode,
                            )
                            .map_err(|e| e.to_string())?;
                            by_kind.insert(p.kind, result);
                        }
                        let index_result = index_results[sector]
                            .iter()
                            .find(|r| r.window_label == window.label)
                            .expect("index result per window");
                        for basis in [MetricBasis::CumulativeReturn, MetricBasis::Sharpe] {
                            let class = classify(&by_kind, index_result, basis)
                                .map_err(|e| e.to_string())?;
                            classifications.push(ClassificationRecord {
                                window: window.label,
                                basis,
                                outcome: class.value,
                            });
                        }
                        results.extend(by_kind.into_values());
                    }
                    Ok(CellBacktests {
                        results,
                        classifications,
                    })
                };
                match compute() {
                    Ok(v) => CellRecord::ok(id, sector, v, Vec::new()),
                    Err(e) => CellRecord::failed(id, sector, e),
                }
            })
            .collect();
        let artifact = BacktestArtifact {
            cells,
            index: index_results,
        };
        write_json(out_dir, BACKTESTS_FILE, &artifact)?;
        reports::write_results_csv(out_dir, &artifact)
            .map_err(|e| PipelineError::Report(e.to_string()))?;
        reports::write_paths_csv(out_dir, &artifact)
            .map_err(|e| PipelineError::Report(e.to_string()))?;
        Ok(summarize(&artifact.cells))
    }

    /// Structural diagnostics per cell.
    pub fn diagnose(&self, out_dir: &Path) -> Result<StageSummary, PipelineError> {
        let market = MarketContext::load(&self.config)?;
        let universes: Vec<CellRecord<UniverseSelection>> =
            read_json(out_dir, UNIVERSES_FILE)?;
        let weighting: Vec<CellRecord<Vec<WeightingRun>>> = read_json(out_dir, WEIGHTING_FILE)?;
        let portfolios: Vec<CellRecord<Vec<Portfolio<Real>>>> =
            read_json(out_dir, PORTFOLIOS_FILE)?;
        let backtests: BacktestArtifact = read_json_value(out_dir, BACKTESTS_FILE)?;
        let u_by_cell = index_records(&universes);
        let w_by_cell = index_records(&weighting);
        let p_by_cell = index_records(&portfolios);
        let b_by_cell: BTreeMap<(String, String), &CellRecord<CellBacktests>> = backtests
            .cells
            .iter()
            .map(|r| ((r.model_id.clone(), r.sector_name.clone()), r))
            .collect();
        let oos_windows: Vec<WindowSpec> = self
            .config
            .windows
            .iter()
            .filter(|w| w.label != WindowLabel::InSample)
            .copied()
            .collect();

        let records: Vec<CellRecord<DiagnosticsReport<Real>>> = self
            .cells()
            .par_iter()
            .map(|(model, sector)| {
                let id = &model.model_id;
                let compute = || -> Result<DiagnosticsReport<Real>, String> {
                    let universe = lookup(&u_by_cell, id, sector)?;
                    let runs = lookup(&w_by_cell, id, sector)?;
                    let five = lookup(&p_by_cell, id, sector)?;
                    let cell = b_by_cell
                        .get(&(id.clone(), sector.clone()))
                        .and_then(|r| r.value.as_ref())
                        .ok_or_else(|| "cell failed at the backtest stage".to_string())?;
                    let llm = five
                        .iter()
                        .find(|p| p.kind == PortfolioKind::LlmWeighted)
                        .ok_or_else(|| "missing LLM-weighted portfolio".to_string())?;
                    let matrix = market
                        .cell_matrix(sector, &universe.chosen)?
                        .select_tickers(&universe.chosen)
                        .map_err(|e| e.to_string())?;
                    let oos = concat_windows(&matrix, &oos_windows).map_err(|e| e.to_string())?;
                    let pca = pca_components_for_threshold(&oos, self.config.pca_threshold)
                        .map_err(|e| e.to_string())?;
                    let erank = effective_rank(&sample_covariance(oos.values()))
                        .map_err(|e| e.to_string())?;
                    let wv =
                        weight_volatility::<Real>(runs, &universe.chosen).map_err(|e| e.to_string())?;
                    let rv_by_window: BTreeMap<WindowLabel, Real> = cell
                        .results
                        .iter()
                        .filter(|r| {
                            r.portfolio_ref.kind
                                == SeriesKind::Portfolio(PortfolioKind::LlmWeighted)
                        })
                        .map(|r| (r.window_label, r.relative_volatility))
                        .collect();
                    Ok(DiagnosticsReport {
                        model_id: id.clone(),
                        sector_name: sector.clone(),
                        pca_components_95: pca,
                        effective_rank: erank,
                        hhi: hhi(llm),
                        weight_volatility: wv,
                        relative_volatility_by_window: rv_by_window,
                    })
                };
                match compute() {
                    Ok(v) => CellRecord::ok(id, sector, v, Vec::new()),
                    Err(e) => CellRecord::failed(id, sector, e),
                }
            })
            .collect();
        write_json(out_dir, DIAGNOSTICS_FILE, &records)?;
        reports::write_diagnostics_csvs(out_dir, &self.config, &records, &universes)
            .map_err(|e| PipelineError::Report(e.to_string()))?;
        Ok(summarize(&records))
    }

    /// Classification grids, the manifest, and the digest file.
    pub fn report(&self, out_dir: &Path) -> Result<RunManifest, PipelineError> {
        let universes: Vec<CellRecord<UniverseSelection>> =
            read_json(out_dir, UNIVERSES_FILE)?;
        let portfolios: Vec<CellRecord<Vec<Portfolio<Real>>>> =
            read_json(out_dir, PORTFOLIOS_FILE)?;
        let backtests: BacktestArtifact = read_json_value(out_dir, BACKTESTS_FILE)?;
        let diagnostics: Vec<CellRecord<DiagnosticsReport<Real>>> =
            read_json(out_dir, DIAGNOSTICS_FILE)?;
        if !diagnostics.iter().any(CellRecord::is_ok) {
            return Err(PipelineError::Report(
                "no successful cells; nothing to report".into(),
            ));
        }

        reports::write_classification_grids(out_dir, &self.config, &backtests)
            .map_err(|e| PipelineError::Report(e.to_string()))?;

        // cell status: ok only if every stage succeeded
        let mut cells = Vec::new();
        let mut error_log = Vec::new();
        let d_by_cell = index_records(&diagnostics);
        let u_by_cell = index_records(&universes);
        let p_by_cell = index_records(&portfolios);
        let b_by_cell: BTreeMap<(String, String), &CellRecord<CellBacktests>> = backtests
            .cells
            .iter()
            .map(|r| ((r.model_id.clone(), r.sector_name.clone()), r))
            .collect();
        let mut portfolio_count = 0usize;
        for (model, sector) in self.cells() {
            let id = &model.model_id;
            let key = (id.clone(), sector.clone());
            let mut warnings = Vec::new();
            let mut error = None;
            for rec_err in [
                u_by_cell.get(&key).map(|r| (&r.warnings, &r.error)),
                p_by_cell.get(&key).map(|r| (&r.warnings, &r.error)),
                b_by_cell.get(&key).map(|r| (&r.warnings, &r.error)),
                d_by_cell.get(&key).map(|r| (&r.warnings, &r.error)),
            ]
            .into_iter()
            .flatten()
            {
                warnings.extend(rec_err.0.iter().cloned());
                if error.is_none() {
                    error = rec_err.1.clone();
                }
            }
            let ok = error.is_none() && d_by_cell.get(&key).is_some_and(|r| r.is_ok());
            if ok {
                portfolio_count += p_by_cell
                    .get(&key)
                    .and_then(|r| r.value.as_ref())
                    .map_or(0, Vec::len);
            }
            if let Some(e) = &error {
                error_log.push(format!("{id}/{sector}: {e}"));
            }
            for w in &warnings {
                error_log.push(format!("{id}/{sector}: warning: {w}"));
            }
            cells.push(CellStatus {
                model_id: id.clone(),
                sector_name: sector.clone(),
                state: if ok { CellState::Ok } else { CellState::Failed },
                error,
                warnings,
            });
        }

        let artifacts = digest_artifacts(out_dir)?;
        let manifest = RunManifest {
            config: serde_json::to_value(&self.config)
                .map_err(|e| PipelineError::Report(e.to_string()))?,
            cells,
            portfolio_count,
            error_log,
            artifacts,
        };
        let manifest_text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| PipelineError::Report(e.to_string()))?
            + "\n";
        let manifest_path = out_dir.join(MANIFEST_FILE);
        std::fs::write(&manifest_path, &manifest_text)
            .map_err(|e| PipelineError::Io(manifest_path, e))?;

        let mut digest_lines: Vec<String> = manifest
            .artifacts
            .iter()
            .map(|(path, digest)| format!("{digest}  {path}"))
            .collect();
        digest_lines.push(format!(
            "{}  {}",
            sha256_hex(manifest_text.as_bytes()),
            MANIFEST_FILE
        ));
        digest_lines.sort_by(|a, b| a[66..].cmp(&b[66..]));
        let digest_path = out_dir.join(DIGESTS_FILE);
        std::fs::write(&digest_path, digest_lines.join("\n") + "\n")
            .map_err(|e| PipelineError::Io(digest_path, e))?;
        Ok(manifest)
    }

    fn in_sample_window(&self) -> WindowSpec {
        *self
            .config
            .windows
            .iter()
            .find(|w| w.label == WindowLabel::InSample)
            .expect("validated by config")
    }
}

/// Rows of `matrix` falling in any of the given windows, concatenated in
/// date order.
fn concat_windows(
    matrix: &ReturnsMatrix<Real>,
    windows: &[WindowSpec],
) -> Result<ReturnsMatrix<Real>, String> {
    let keep: Vec<usize> = matrix
        .dates()
        .iter()
        .enumerate()
        .filter(|(_, d)| windows.iter().any(|w| w.range.contains(**d)))
        .map(|(i, _)| i)
        .collect();
    if keep.len() < 2 {
        return Err("fewer than two out-of-sample rows".into());
    }
    let dates = keep.iter().map(|&i| matrix.dates()[i]).collect();
    let values = Mat::from_fn(keep.len(), matrix.assets(), |i, j| {
        matrix.values()[(keep[i], j)]
    });
    ReturnsMatrix::new(matrix.tickers().to_vec(), dates, values).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSummary {
    pub ok: usize,
    pub failed: usize,
}

fn summarize<T>(records: &[CellRecord<T>]) -> StageSummary {
    let ok = records.iter().filter(|r| r.is_ok()).count();
    StageSummary {
        ok,
        failed: records.len() - ok,
    }
}

fn index_records<T>(records: &[CellRecord<T>]) -> BTreeMap<(String, String), &CellRecord<T>> {
    records
        .iter()
        .map(|r| ((r.model_id.clone(), r.sector_name.clone()), r))
        .collect()
}

fn lookup<'a, T>(
    map: &'a BTreeMap<(String, String), &CellRecord<T>>,
    model_id: &str,
    sector: &str,
) -> Result<&'a T, String> {
    let record = map
        .get(&(model_id.to_string(), sector.to_string()))
        .ok_or_else(|| "cell missing from earlier stage output".to_string())?;
    match (&record.value, &record.error) {
        (Some(v), _) => Ok(v),
        (None, Some(e)) => Err(format!("carried over: {e}")),
        (None, None) => Err("earlier stage produced no value".to_string()),
    }
}

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<(), PipelineError> {
    let path = out_dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Decode(path.clone(), e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| PipelineError::Io(path, e))
}

fn read_json<T: DeserializeOwned>(
    out_dir: &Path,
    name: &str,
) -> Result<Vec<CellRecord<T>>, PipelineError> {
    read_json_value(out_dir, name)
}

fn read_json_value<T: DeserializeOwned>(out_dir: &Path, name: &str) -> Result<T, PipelineError> {
    let path = out_dir.join(name);
    if !path.exists() {
        return Err(PipelineError::MissingStage(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io(path.clone(), e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Decode(path, e.to_string()))
}

/// SHA-256 of every artifact under `out_dir` (excluding the manifest and
/// digest files themselves), keyed by relative path.
fn digest_artifacts(out_dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut artifacts = BTreeMap::new();
    let mut stack = vec![out_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries =
            std::fs::read_dir(&dir).map_err(|e| PipelineError::Io(dir.clone(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| PipelineError::Io(dir.clone(), e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(out_dir)
                .expect("artifact under out_dir")
                .to_string_lossy()
                .replace('\\', "/");
            if rel == MANIFEST_FILE || rel == DIGESTS_FILE {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| PipelineError::Io(path.clone(), e))?;
            artifacts.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(artifacts)
}
