//! Experiment records and content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use haoi_core::{HaoiError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const RECORD_FILE: &str = "experiment.json";
pub const RECORD_FORMAT: &str = "haoi-experiment";
pub const RECORD_VERSION: &str = "1";

/// Provenance of one command run, written into its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub format: String,
    pub version: String,
    pub tool_version: String,
    pub command: String,
    pub command_line: Vec<String>,
    pub config: RunConfig,
    /// Content hash of each input, by role.
    pub inputs: BTreeMap<String, String>,
    /// Content hash of each file written, by name.
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentRecord {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            command_line: std::env::args().collect(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<String> {
        let h = content_hash(path)?;
        self.inputs.insert(role.into(), h.clone());
        Ok(h)
    }

    /// Hashes every file already in `dir` and writes the record next to them.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.outputs.clear();
        for file in files_under(dir)? {
            let rel = file.strip_prefix(dir).unwrap_or(&file).to_string_lossy().replace('\\', "/");
            if rel != RECORD_FILE {
                self.outputs.insert(rel, blob_hash(&file)?);
            }
        }
        let path = dir.join(RECORD_FILE);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| HaoiError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HaoiError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Git-style blob hash (SHA-256 over `blob <len>\0<bytes>`).
pub fn blob_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HaoiError::io(path, e))?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}

/// Hash of a file, or of a directory as a sorted tree of its files' blob hashes.
/// Experiment records are left out so that re-runs hash the same.
pub fn content_hash(path: &Path) -> Result<String> {
    if path.is_file() {
        return blob_hash(path);
    }
    let mut h = Sha256::new();
    h.update(b"tree\0");
    for file in files_under(path)? {
        let rel = file.strip_prefix(path).unwrap_or(&file).to_string_lossy().replace('\\', "/");
        if rel == RECORD_FILE {
            continue;
        }
        h.update(rel.as_bytes());
        h.update(b"\0");
        h.update(blob_hash(&file)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| HaoiError::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| HaoiError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
