//! Run manifest: per-cell status, portfolio counts, and content digests
//! of every emitted artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub model_id: String,
    pub sector_name: String,
    pub state: CellState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Summary of one pipeline run, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Resolved configuration snapshot.
    pub config: serde_json::Value,
    pub cells: Vec<CellStatus>,
    /// Five per successful cell.
    pub portfolio_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub error_log: Vec<String>,
    /// Relative artifact path -> SHA-256 of file contents.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn successful_cells(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.state == CellState::Ok)
            .count()
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.len() - self.successful_cells()
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

/// SHA-256 of a byte slice, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn counts_split_by_state() {
        let manifest = RunManifest {
            config: serde_json::json!({}),
            cells: vec![
                CellStatus {
                    model_id: "a".into(),
                    sector_name: "s".into(),
                    state: CellState::Ok,
                    error: None,
                    warnings: vec![],
                },
                CellStatus {
                    model_id: "b".into(),
                    sector_name: "s".into(),
                    state: CellState::Failed,
                    error: Some("boom".into()),
                    warnings: vec![],
                },
            ],
            portfolio_count: 5,
            error_log: vec![],
            artifacts: BTreeMap::new(),
        };
        assert_eq!(manifest.successful_cells(), 1);
        assert_eq!(manifest.failed_cells(), 1);
    }
}
