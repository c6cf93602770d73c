//! Append-only prompt/response transcripts (cassettes) for deterministic
//! replay. One JSON object per line, sequence numbers strictly increasing.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prompts::PromptKind;
use super::GatewayError;

/// One recorded request/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub sequence_no: u64,
    pub prompt_kind: PromptKind,
    pub rendered_prompt: String,
    pub response_text: String,
    pub provider_id: String,
    pub model_name: String,
    pub timestamp: String,
    /// Opaque decoding parameters in effect when recording (temperature
    /// and similar). Never used for matching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

/// Writes cassette entries as they happen. Single writer per cassette.
pub struct CassetteRecorder {
    writer: BufWriter<File>,
    path: PathBuf,
    next_seq: u64,
}

impl CassetteRecorder {
    /// Create (or truncate) a cassette at `path`.
    pub fn create(path: &Path) -> Result<Self, GatewayError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(path)?;
        Ok(CassetteRecorder {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
            next_seq: 1,
        })
    }

    /// Continue an existing cassette, picking up after its last
    /// sequence number (creates the file when absent).
    pub fn open_append(path: &Path) -> Result<Self, GatewayError> {
        if !path.exists() {
            return Self::create(path);
        }
        let last_seq = {
            let file = File::open(path)?;
            let mut last = 0u64;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                    GatewayError::CassetteCorrupt {
                        line: idx as u64 + 1,
                        reason: e.to_string(),
                    }
                })?;
                last = entry.sequence_no;
            }
            last
        };
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(CassetteRecorder {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
            next_seq: last_seq + 1,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, mut entry: CassetteEntry) -> Result<(), GatewayError> {
        entry.sequence_no = self.next_seq;
        self.next_seq += 1;
        let line = serde_json::to_string(&entry)
            .map_err(|e| GatewayError::ProviderError(format!("cassette encode: {e}")))?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Serves recorded responses by exact (kind, rendered prompt) match.
/// Repeats of an identical prompt are consumed in recording order.
#[derive(Debug)]
pub struct CassetteReplayer {
    queues: HashMap<(PromptKind, String), VecDeque<CassetteEntry>>,
    entries_total: usize,
}

impl CassetteReplayer {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|e| {
            GatewayError::CassetteCorrupt {
                line: 0,
                reason: format!("{}: {e}", path.display()),
            }
        })?;
        let reader = BufReader::new(file);
        let mut queues: HashMap<(PromptKind, String), VecDeque<CassetteEntry>> = HashMap::new();
        let mut last_seq = 0u64;
        let mut total = 0usize;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx as u64 + 1;
            let line = line.map_err(|e| GatewayError::CassetteCorrupt {
                line: line_no,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(&line).map_err(|e| GatewayError::CassetteCorrupt {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            if entry.sequence_no <= last_seq {
                return Err(GatewayError::CassetteCorrupt {
                    line: line_no,
                    reason: format!(
                        "sequence_no {} not greater than previous {}",
                        entry.sequence_no, last_seq
                    ),
                });
            }
            last_seq = entry.sequence_no;
            total += 1;
            queues
                .entry((entry.prompt_kind, entry.rendered_prompt.clone()))
                .or_default()
                .push_back(entry);
        }
        Ok(CassetteReplayer {
            queues,
            entries_total: total,
        })
    }

    pub fn len(&self) -> usize {
        self.entries_total
    }

    pub fn is_empty(&self) -> bool {
        self.entries_total == 0
    }

    /// Next recorded response for this exact prompt, consuming it.
    pub fn next(&mut self, kind: PromptKind, prompt: &str) -> Result<String, GatewayError> {
        let entry = self
            .queues
            .get_mut(&(kind, prompt.to_string()))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| GatewayError::ReplayMiss {
                kind,
                prompt_preview: prompt.chars().take(80).collect(),
            })?;
        self.entries_total -= 1;
        Ok(entry.response_text)
    }
}
