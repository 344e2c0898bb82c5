//! Run configuration: one TOML file holding every section of the pipeline.

use std::path::Path;

use haoi_core::discrete_repr::VqVaeConfig;
use haoi_core::hand_model::HandModelConfig;
use haoi_core::manip_lm::LmConfig;
use haoi_core::metrics::MetricsConfig;
use haoi_core::synth_data::DatasetConfig;
use haoi_core::{HaoiError, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Keys accepted although absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &["hand.basis_path"];

const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Dataset split the task runner and evaluator read.
    pub split: String,
    pub samples_per_sequence: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            split: "test".into(),
            samples_per_sequence: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stream in the pipeline derives from it.
    pub seed: u64,
    pub hand: HandModelConfig,
    pub dataset: DatasetConfig,
    pub vqvae: VqVaeConfig,
    pub lm: LmConfig,
    pub tasks: TaskConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hand: HandModelConfig::default(),
            dataset: DatasetConfig::default(),
            vqvae: VqVaeConfig::default(),
            lm: LmConfig::default(),
            tasks: TaskConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HaoiError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses and validates, reporting every unknown key and invalid value together.
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = toml::from_str(text).map_err(|e| HaoiError::validation(format!("config: {e}")))?;
        let defaults = match Value::try_from(RunConfig::default()) {
            Ok(Value::Table(t)) => t,
            _ => return Err(HaoiError::Invariant("default config does not serialize to a table".into())),
        };
        let mut problems: Vec<String> = unknown_keys(&table, &defaults, "")
            .into_iter()
            .map(|k| format!("{k}: unknown key"))
            .collect();
        if !problems.is_empty() {
            return Err(HaoiError::validation(problems.join("; ")));
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HaoiError::validation(format!("config: {}", e.message())))?;
        problems.extend(config.problems());
        if !problems.is_empty() {
            return Err(HaoiError::validation(problems.join("; ")));
        }
        Ok(config)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.hand.vertex_count < 16 {
            p.push("hand.vertex_count: must be at least 16".into());
        }
        p.extend(self.dataset.problems());
        p.extend(self.vqvae.problems());
        p.extend(self.lm.problems());
        p.extend(self.metrics.problems());
        if !SPLITS.contains(&self.tasks.split.as_str()) {
            p.push(format!("tasks.split: '{}' is not one of train, val, test", self.tasks.split));
        }
        if self.tasks.samples_per_sequence == 0 {
            p.push("tasks.samples_per_sequence: must be at least 1".into());
        }
        p
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HaoiError::Invariant(format!("config does not serialize: {e}")))
    }
}

fn unknown_keys(given: &Table, known: &Table, prefix: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (key, value) in given {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, known.get(key)) {
            (Value::Table(sub), Some(Value::Table(known_sub))) => out.extend(unknown_keys(sub, known_sub, &path)),
            (_, Some(_)) => {}
            (_, None) if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            (_, None) => out.push(path),
        }
    }
    out
}
