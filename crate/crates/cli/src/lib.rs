//! Pipeline driver for sector portfolio construction: configuration,
//! stage orchestration, report emission, and the run manifest.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod reports;

pub use config::{ConfigError, ModelConfig, RunConfig};
pub use manifest::{CellState, CellStatus, RunManifest};
pub use pipeline::{Pipeline, PipelineError, StageSummary};
