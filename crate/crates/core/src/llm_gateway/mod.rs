//! Provider-agnostic LLM access with deterministic record/replay.
//!
//! A [`Gateway`] renders the four-prompt protocol for one (model, sector)
//! cell and runs it in one of three modes: `live` (network only),
//! `record` (network, transcript appended to a cassette), or `replay`
//! (responses served from the cassette, no network access).

pub mod cassette;
pub mod parse;
pub mod prompts;
pub mod transport;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbol::Symbol;
use crate::universe::{SectorSpec, SelectionRun};

pub use cassette::{CassetteEntry, CassetteRecorder, CassetteReplayer};
pub use prompts::{render_prompt, PromptContext, PromptKind, PromptTemplate};
pub use transport::{HttpTransport, ScriptedTransport, Transport};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt {kind} is missing required placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        kind: PromptKind,
        placeholder: &'static str,
    },
    #[error("unparseable reply: {0}")]
    ParseError(String),
    #[error("negative weight {weight} for {symbol}")]
    NegativeWeight { symbol: Symbol, weight: f64 },
    #[error("provider error: {0}")]
    ProviderError(String),
    #[error("replay miss for {kind} prompt starting {prompt_preview:?}")]
    ReplayMiss {
        kind: PromptKind,
        prompt_preview: String,
    },
    #[error("cassette corrupt at line {line}: {reason}")]
    CassetteCorrupt { line: u64, reason: String },
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Connection and request-shaping settings for one provider endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub auth_ref: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Optional JSON payload template with `{model}` and `{prompt}` markers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_template: Option<String>,
    /// JSON pointer to the reply text; defaults to the chat-completions path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text_path: Option<String>,
    /// Opaque decoding parameters merged into the request payload and
    /// recorded in cassette metadata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_in_flight() -> usize {
    4
}

/// One repetition of the weight-assignment prompt pair. Weights are raw
/// (unnormalized) and restricted to the requested tickers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingRun {
    pub model_id: String,
    pub sector_name: String,
    pub run_index: u32,
    pub weights: BTreeMap<Symbol, f64>,
    pub rationale_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

/// Prompt runner for one (model, sector) cell.
pub struct Gateway {
    model_id: String,
    provider: ProviderConfig,
    mode: GatewayMode,
    transport: Option<Arc<dyn Transport>>,
    recorder: Option<Mutex<CassetteRecorder>>,
    replayer: Option<Mutex<CassetteReplayer>>,
}

impl Gateway {
    /// Build a gateway. `transport` is required in live and record modes
    /// and never touched in replay mode; `cassette_path` is required in
    /// record and replay modes.
    pub fn new(
        model_id: &str,
        provider: ProviderConfig,
        mode: GatewayMode,
        transport: Option<Arc<dyn Transport>>,
        cassette_path: Option<&Path>,
    ) -> Result<Self, GatewayError> {
        let (recorder, replayer) = match mode {
            GatewayMode::Live => (None, None),
            GatewayMode::Record => {
                let path = cassette_path.ok_or_else(|| {
                    GatewayError::InvalidConfig("record mode requires a cassette path".into())
                })?;
                (Some(Mutex::new(CassetteRecorder::create(path)?)), None)
            }
            GatewayMode::Replay => {
                let path = cassette_path.ok_or_else(|| {
                    GatewayError::InvalidConfig("replay mode requires a cassette path".into())
                })?;
                (None, Some(Mutex::new(CassetteReplayer::load(path)?)))
            }
        };
        if matches!(mode, GatewayMode::Live | GatewayMode::Record) && transport.is_none() {
            return Err(GatewayError::InvalidConfig(format!(
                "{} mode requires a transport",
                if mode == GatewayMode::Live { "live" } else { "record" }
            )));
        }
        Ok(Gateway {
            model_id: model_id.to_string(),
            provider,
            mode,
            transport,
            recorder,
            replayer,
        })
    }

    pub fn replay(
        model_id: &str,
        provider: ProviderConfig,
        cassette_path: &Path,
    ) -> Result<Self, GatewayError> {
        Gateway::new(
            model_id,
            provider,
            GatewayMode::Replay,
            None,
            Some(cassette_path),
        )
    }

    /// Record mode continuing an existing cassette (later pipeline
    /// stages append their exchanges after the earlier rounds).
    pub fn record_append(
        model_id: &str,
        provider: ProviderConfig,
        transport: Arc<dyn Transport>,
        cassette_path: &Path,
    ) -> Result<Self, GatewayError> {
        Ok(Gateway {
            model_id: model_id.to_string(),
            provider,
            mode: GatewayMode::Record,
            transport: Some(transport),
            recorder: Some(Mutex::new(CassetteRecorder::open_append(cassette_path)?)),
            replayer: None,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    /// Issue one prompt and return the reply text, honoring the mode.
    fn complete(&self, kind: PromptKind, prompt: &str) -> Result<String, GatewayError> {
        if self.mode == GatewayMode::Replay {
            return self
                .replayer
                .as_ref()
                .expect("replayer present in replay mode")
                .lock()
                .expect("replayer lock")
                .next(kind, prompt);
        }
        let transport = self.transport.as_ref().expect("transport present");
        let response = self.call_with_retries(transport.as_ref(), prompt)?;
        if let Some(recorder) = &self.recorder {
            recorder
                .lock()
                .expect("recorder lock")
                .append(CassetteEntry {
                    sequence_no: 0,
                    prompt_kind: kind,
                    rendered_prompt: prompt.to_string(),
                    response_text: response.clone(),
                    provider_id: self.provider.provider_id.clone(),
                    model_name: self.provider.model_name.clone(),
                    timestamp: chrono::Utc::now().to_rfc3339(),
                    params: self.provider.params.clone(),
                })?;
        }
        Ok(response)
    }

    fn call_with_retries(
        &self,
        transport: &dyn Transport,
        prompt: &str,
    ) -> Result<String, GatewayError> {
        let mut attempt = 0u32;
        loop {
            match transport.complete(&self.provider, prompt) {
                Ok(r) => return Ok(r),
                Err(GatewayError::ProviderError(msg)) if attempt < self.provider.max_retries => {
                    let base = 100u64.saturating_mul(1 << attempt.min(6));
                    let jitter = rand::rng().random_range(0..=base / 2);
                    let delay = Duration::from_millis((base + jitter).min(10_000));
                    log::warn!(
                        "{} attempt {} failed ({msg}); retrying in {delay:?}",
                        self.provider.provider_id,
                        attempt + 1
                    );
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Run the selection prompt pair `repeats` times. A failed repeat
    /// aborts the whole round.
    pub fn run_selection_round(
        &self,
        sector: &SectorSpec,
        portfolio_size: usize,
        repeats: u32,
    ) -> Result<Vec<SelectionRun>, GatewayError> {
        if repeats < 1 {
            return Err(GatewayError::InvalidConfig("repeats must be >= 1".into()));
        }
        let mut runs = Vec::with_capacity(repeats as usize);
        for run_index in 1..=repeats {
            let select_ctx = PromptContext {
                portfolio_size,
                ..Default::default()
            };
            let p1 = render_prompt(PromptKind::SelectStocks, sector, &select_ctx)?;
            let composition = self.complete(PromptKind::SelectStocks, &p1)?;

            let extract_ctx = PromptContext {
                prior_output: Some(&composition),
                ..Default::default()
            };
            let p2 = render_prompt(PromptKind::ExtractTickers, sector, &extract_ctx)?;
            let ticker_reply = self.complete(PromptKind::ExtractTickers, &p2)?;
            let raw_tickers = parse::parse_ticker_symbols(&ticker_reply)?;

            runs.push(SelectionRun {
                model_id: self.model_id.clone(),
                sector_name: sector.sector_name.clone(),
                run_index,
                raw_tickers,
                rationale_text: composition,
            });
        }
        Ok(runs)
    }

    /// Run the weighting prompt pair `repeats` times over a fixed
    /// universe. Replies naming tickers outside the universe are dropped
    /// with a warning.
    pub fn run_weighting_round(
        &self,
        sector: &SectorSpec,
        tickers: &[Symbol],
        repeats: u32,
    ) -> Result<Vec<WeightingRun>, GatewayError> {
        if tickers.is_empty() {
            return Err(GatewayError::InvalidConfig(
                "weighting round needs a non-empty ticker list".into(),
            ));
        }
        if repeats < 1 {
            return Err(GatewayError::InvalidConfig("repeats must be >= 1".into()));
        }
        let universe: BTreeSet<&Symbol> = tickers.iter().collect();
        let mut runs = Vec::with_capacity(repeats as usize);
        for run_index in 1..=repeats {
            let assign_ctx = PromptContext {
                ticker_list: Some(tickers),
                ..Default::default()
            };
            let p3 = render_prompt(PromptKind::AssignWeights, sector, &assign_ctx)?;
            let rationale = self.complete(PromptKind::AssignWeights, &p3)?;

            let extract_ctx = PromptContext {
                prior_output: Some(&rationale),
                ..Default::default()
            };
            let p4 = render_prompt(PromptKind::ExtractWeights, sector, &extract_ctx)?;
            let weights_reply = self.complete(PromptKind::ExtractWeights, &p4)?;
            let parsed = parse::parse_weight_string(&weights_reply)?;

            let mut warnings = Vec::new();
            let mut weights = BTreeMap::new();
            for (symbol, weight) in parsed {
                if universe.contains(&symbol) {
                    weights.insert(symbol, weight);
                } else {
                    let w = format!(
                        "{}/{} run {run_index}: dropped weight for {symbol} outside the universe",
                        self.model_id, sector.sector_name
                    );
                    log::warn!("{w}");
                    warnings.push(w);
                }
            }
            if weights.is_empty() {
                return Err(GatewayError::ParseError(format!(
                    "weighting reply named no tickers from the {}-stock universe",
                    tickers.len()
                )));
            }
            runs.push(WeightingRun {
                model_id: self.model_id.clone(),
                sector_name: sector.sector_name.clone(),
                run_index,
                weights,
                rationale_text: rationale,
                warnings,
            });
        }
        Ok(runs)
    }
}
