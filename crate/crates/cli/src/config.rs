//! Run configuration: a single declarative TOML file, with every default
//! overridable and paths resolved relative to the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sectorfolio_core::backtest::CumulativeMode;
use sectorfolio_core::llm_gateway::{GatewayMode, ProviderConfig};
use sectorfolio_core::marketdata::{DateInterval, WindowLabel, WindowSpec};
use sectorfolio_core::Symbol;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {0} cannot be read: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("config {0} cannot be parsed: {1}")]
    Parse(PathBuf, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// One model entry: a display id plus its provider connection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    #[serde(flatten)]
    pub provider: ProviderConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawWindow {
    label: WindowLabel,
    start: String,
    end: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPaths {
    prices: PathBuf,
    registry: PathBuf,
    #[serde(default)]
    cassette_dir: Option<PathBuf>,
}

fn default_k() -> usize {
    20
}
fn default_selection_repeats() -> u32 {
    10
}
fn default_weighting_repeats() -> u32 {
    5
}
fn default_rf() -> f64 {
    0.02
}
fn default_ppy() -> u32 {
    252
}
fn default_frontier_points() -> usize {
    50
}
fn default_pca_threshold() -> f64 {
    0.95
}
fn default_alignment_loss() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawConfig {
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_selection_repeats")]
    selection_repeats: u32,
    #[serde(default = "default_weighting_repeats")]
    weighting_repeats: u32,
    #[serde(default = "default_rf")]
    rf_annual: f64,
    #[serde(default = "default_ppy")]
    periods_per_year: u32,
    #[serde(default = "default_frontier_points")]
    frontier_points: usize,
    #[serde(default = "default_pca_threshold")]
    pca_threshold: f64,
    #[serde(default = "default_alignment_loss")]
    max_alignment_loss: f64,
    #[serde(default)]
    cumulative_mode: CumulativeMode,
    mode: GatewayMode,
    sectors: Vec<String>,
    models: Vec<ModelConfig>,
    windows: Vec<RawWindow>,
    paths: RawPaths,
    /// Price-file symbol overrides for index series (source symbol per
    /// sector when it differs from the registry's index ticker).
    #[serde(default)]
    index_symbols: BTreeMap<String, String>,
}

/// Validated run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub k: usize,
    pub selection_repeats: u32,
    pub weighting_repeats: u32,
    pub rf_annual: f64,
    pub periods_per_year: u32,
    pub frontier_points: usize,
    pub pca_threshold: f64,
    pub max_alignment_loss: f64,
    pub cumulative_mode: CumulativeMode,
    pub mode: GatewayMode,
    pub sectors: Vec<String>,
    pub models: Vec<ModelConfig>,
    pub windows: Vec<WindowSpec>,
    pub prices_path: PathBuf,
    pub registry_path: PathBuf,
    pub cassette_dir: Option<PathBuf>,
    pub index_symbols: BTreeMap<String, Symbol>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse(path.to_path_buf(), e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_raw(raw, base)
    }

    fn from_raw(raw: RawConfig, base: &Path) -> Result<Self, ConfigError> {
        if raw.k < 2 {
            return Err(ConfigError::Invalid(format!(
                "portfolio size k must be >= 2, got {}",
                raw.k
            )));
        }
        if raw.selection_repeats < 1 || raw.weighting_repeats < 1 {
            return Err(ConfigError::Invalid("repeats must be >= 1".into()));
        }
        if raw.frontier_points < 2 {
            return Err(ConfigError::Invalid("frontier_points must be >= 2".into()));
        }
        if !(raw.pca_threshold > 0.0 && raw.pca_threshold <= 1.0) {
            return Err(ConfigError::Invalid("pca_threshold must be in (0, 1]".into()));
        }
        if raw.sectors.is_empty() {
            return Err(ConfigError::Invalid("at least one sector required".into()));
        }
        if raw.models.is_empty() {
            return Err(ConfigError::Invalid("at least one model required".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for m in &raw.models {
            if !ids.insert(m.model_id.clone()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate model_id {}",
                    m.model_id
                )));
            }
        }

        let mut windows = Vec::with_capacity(raw.windows.len());
        for w in &raw.windows {
            let start = parse_date(&w.start)?;
            let end = parse_date(&w.end)?;
            let range = DateInterval::new(start, end).ok_or_else(|| {
                ConfigError::Invalid(format!("window {} has start >= end", w.label))
            })?;
            windows.push(WindowSpec {
                label: w.label,
                range,
            });
        }
        if windows.iter().filter(|w| w.label == WindowLabel::InSample).count() != 1 {
            return Err(ConfigError::Invalid(
                "exactly one in_sample window required".into(),
            ));
        }
        for (i, a) in windows.iter().enumerate() {
            for b in &windows[i + 1..] {
                if a.label == b.label {
                    return Err(ConfigError::Invalid(format!(
                        "duplicate window label {}",
                        a.label
                    )));
                }
                if a.range.start < b.range.end && b.range.start < a.range.end {
                    return Err(ConfigError::Invalid(format!(
                        "windows {} and {} overlap",
                        a.label, b.label
                    )));
                }
            }
        }

        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let cassette_dir = raw.paths.cassette_dir.as_deref().map(resolve);
        if matches!(raw.mode, GatewayMode::Replay | GatewayMode::Record) && cassette_dir.is_none()
        {
            return Err(ConfigError::Invalid(format!(
                "{} mode requires paths.cassette_dir",
                match raw.mode {
                    GatewayMode::Replay => "replay",
                    _ => "record",
                }
            )));
        }

        Ok(RunConfig {
            k: raw.k,
            selection_repeats: raw.selection_repeats,
            weighting_repeats: raw.weighting_repeats,
            rf_annual: raw.rf_annual,
            periods_per_year: raw.periods_per_year,
            frontier_points: raw.frontier_points,
            pca_threshold: raw.pca_threshold,
            max_alignment_loss: raw.max_alignment_loss,
            cumulative_mode: raw.cumulative_mode,
            mode: raw.mode,
            sectors: raw.sectors,
            models: raw.models,
            windows,
            prices_path: resolve(&raw.paths.prices),
            registry_path: resolve(&raw.paths.registry),
            cassette_dir,
            index_symbols: raw
                .index_symbols
                .into_iter()
                .map(|(sector, sym)| (sector, Symbol::new(&sym)))
                .collect(),
        })
    }

    /// Cassette file for one (model, sector) cell.
    pub fn cassette_path(&self, model_id: &str, sector: &str) -> Option<PathBuf> {
        self.cassette_dir
            .as_ref()
            .map(|dir| dir.join(format!("{}__{}.jsonl", slug(model_id), slug(sector))))
    }

    /// The price-file symbol for a sector index series.
    pub fn index_symbol(&self, sector: &str, registry_ticker: &Symbol) -> Symbol {
        self.index_symbols
            .get(sector)
            .cloned()
            .unwrap_or_else(|| registry_ticker.clone())
    }

    /// Union span of all configured windows.
    pub fn full_span(&self) -> DateInterval {
        let start = self
            .windows
            .iter()
            .map(|w| w.range.start)
            .min()
            .expect("windows validated non-empty");
        let end = self
            .windows
            .iter()
            .map(|w| w.range.end)
            .max()
            .expect("windows validated non-empty");
        DateInterval { start, end }
    }
}

fn parse_date(s: &str) -> Result<NaiveDate, ConfigError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| ConfigError::Invalid(format!("bad date {s:?}: {e}")))
}

/// Filesystem-safe lowercase slug.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}
