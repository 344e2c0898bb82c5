//! Evaluation metrics and the report that bundles them.

mod distribution;
mod trajectory;
mod volume;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use distribution::{diversity, fid, mean_covariance, mmodality, psd_sqrt, standardize, FidResult, FID_RIDGE};
pub use trajectory::{displacement_errors, resample, trajectory_vector, translations, RESAMPLE_LENGTH};
pub use volume::{interaction_volume, VoxelSet};

use crate::articulated_object::{articulate, ArticulatedObject};
use crate::discrete_repr::{build_objects, prepare_sequences, VqVae};
use crate::error::{HaoiError, Result};
use crate::hand_model::{hand_mesh, HandModelSpec};
use crate::synth_data::HAOISequence;

pub const REPORT_FORMAT: &str = "haoi-metrics";
pub const REPORT_VERSION: &str = "1";

/// Fraction of entries with a nonzero count.
pub fn cuc_single(counts: &[u64]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().filter(|c| **c > 0).count() as f64 / counts.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CucReport {
    /// Mean over the g, l and r books.
    pub hand: f64,
    pub joint: f64,
    pub per_book: [f64; 4],
}

pub fn cuc(usage: &[Vec<u64>; 4]) -> CucReport {
    let per_book = [0, 1, 2, 3].map(|s| cuc_single(&usage[s]));
    CucReport {
        hand: (per_book[0] + per_book[1] + per_book[2]) / 3.0,
        joint: per_book[3],
        per_book,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Generated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub vectors: Vec<Vec<f64>>,
    pub source: Source,
    pub extractor: String,
    /// Per-book entry counts over every encoded frame.
    pub usage: [Vec<u64>; 4],
}

/// Per sequence, the concatenated pre-quantization stage features averaged over frames.
pub fn extract_features(
    sequences: &[HAOISequence],
    objects: &HashMap<String, ArticulatedObject>,
    vq: &VqVae,
    source: Source,
    extractor: &str,
) -> Result<FeatureSet> {
    let set = prepare_sequences(sequences, objects, vq.config.n_points)?;
    let encoded = vq.encode_all(&set)?;
    let mut usage: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; vq.codebook_size()]);
    for e in &encoded {
        for (book, index) in usage.iter_mut().zip(e.tokens.as_array()) {
            book[index as usize] += 1;
        }
    }
    let vectors = (0..sequences.len())
        .map(|i| {
            let range = set.frames_of(i);
            let n = range.len() as f64;
            let mut mean: Vec<f64> = Vec::new();
            for e in &encoded[range] {
                let row = e.features.iter().flatten();
                if mean.is_empty() {
                    mean = row.map(|x| x / n).collect();
                } else {
                    mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n);
                }
            }
            mean
        })
        .collect();
    Ok(FeatureSet {
        vectors,
        source,
        extractor: extractor.to_string(),
        usage,
    })
}

/// Interaction volume of one sequence over its whole trajectory.
pub fn sequence_iv(seq: &HAOISequence, obj: &ArticulatedObject, hand: &HandModelSpec, config: &MetricsConfig) -> Result<f64> {
    let mut voxels = VoxelSet::new(config.voxel_size)?;
    let mut vertices = Vec::new();
    for f in &seq.frames {
        voxels.insert_points(&articulate(obj, &f.joint_state)?);
        vertices.extend(hand_mesh(hand, &f.beta)?.vertices);
    }
    interaction_volume(&vertices, &voxels, config.epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Hand-to-voxel distance threshold in meters.
    pub epsilon: f64,
    pub voxel_size: f64,
    pub resample_length: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            voxel_size: 0.01,
            resample_length: RESAMPLE_LENGTH,
        }
    }
}

impl MetricsConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            p.push(format!("metrics.epsilon: must be positive, got {}", self.epsilon));
        }
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            p.push(format!("metrics.voxel_size: must be positive, got {}", self.voxel_size));
        }
        if self.resample_length < 2 {
            p.push("metrics.resample_length: must be at least 2".into());
        }
        p
    }
}

/// A metric value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricValue {
    Value(f64),
    Error(String),
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(*v),
            Self::Error(_) => None,
        }
    }
}

impl From<Result<f64>> for MetricValue {
    fn from(r: Result<f64>) -> Self {
        match r {
            Ok(v) if v.is_finite() => Self::Value(v),
            Ok(v) => Self::Error(format!("non-finite value {v}")),
            Err(e) => Self::Error(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub metrics: MetricsConfig,
    pub fid_ridge: f64,
    pub fid_ridge_applied: bool,
    pub extractor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub version: String,
    pub counts: BTreeMap<String, usize>,
    pub metrics: BTreeMap<String, MetricValue>,
    pub config: ConfigEcho,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).and_then(MetricValue::value)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} value", "metric");
        for (name, v) in &self.metrics {
            match v {
                MetricValue::Value(x) => {
                    let _ = writeln!(s, "{name:<28} {x:.6}");
                }
                MetricValue::Error(e) => {
                    let _ = writeln!(s, "{name:<28} failed: {e}");
                }
            }
        }
        let _ = writeln!(s);
        for (name, n) in &self.counts {
            let _ = writeln!(s, "{name:<28} {n}");
        }
        let _ = writeln!(
            s,
            "epsilon {} m, voxel {} m, resample {} frames, fid ridge {} ({})",
            self.config.metrics.epsilon,
            self.config.metrics.voxel_size,
            self.config.metrics.resample_length,
            self.config.fid_ridge,
            if self.config.fid_ridge_applied { "applied" } else { "not needed" }
        );
        let _ = writeln!(s, "mmdist is the within-caption multimodality distance");
        let _ = writeln!(s, "cuc counts entries hit by the real set, cuc_train the post-training recount");
        s
    }
}

fn mean_of(values: impl IntoIterator<Item = Result<f64>>) -> Result<f64> {
    let v: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(HaoiError::validation("no sequences to average"));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn caption_groups(gen: &[HAOISequence], n: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut groups: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for seq in gen {
        groups.entry(&seq.caption).or_default().push(trajectory_vector(seq, n)?);
    }
    Ok(groups.into_values().filter(|g| g.len() >= 2).collect())
}

fn paired_errors(gen: &[HAOISequence], real: &[HAOISequence], n: usize) -> Result<Vec<(f64, f64)>> {
    let by_id: HashMap<&str, &HAOISequence> = real.iter().map(|s| (s.id.as_str(), s)).collect();
    gen.iter()
        .filter_map(|g| {
            let src = g.provenance.as_ref()?;
            let r = by_id.get(src.source_sequence.as_str())?;
            Some((g, *r))
        })
        .map(|(g, r)| displacement_errors(&resample(&translations(g), n)?, &resample(&translations(r), n)?))
        .collect()
}

/// Every metric over `generated` against `real`. Failures of individual metrics
/// are recorded in the report.
pub fn evaluate(
    generated: &[HAOISequence],
    real: &[HAOISequence],
    vq: &VqVae,
    hand: &HandModelSpec,
    config: &MetricsConfig,
    extractor: &str,
) -> Result<MetricsReport> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(HaoiError::validation(problems.join("; ")));
    }
    for (name, set) in [("generated", generated), ("real", real)] {
        if set.len() < 2 {
            return Err(HaoiError::validation(format!(
                "{name} set needs at least 2 sequences, found {}",
                set.len()
            )));
        }
    }
    vq.check_hand(hand)?;
    let all: Vec<HAOISequence> = generated.iter().chain(real).cloned().collect();
    let objects = build_objects(&all)?;
    let n = config.resample_length;

    let mut metrics = BTreeMap::new();
    let mut counts = BTreeMap::new();
    counts.insert("generated".to_string(), generated.len());
    counts.insert("real".to_string(), real.len());

    let gen_f = extract_features(generated, &objects, vq, Source::Generated, extractor);
    let real_f = extract_features(real, &objects, vq, Source::Real, extractor);
    let mut ridge_applied = false;
    match (&gen_f, &real_f) {
        (Ok(g), Ok(r)) => {
            let f = fid(&r.vectors, &g.vectors);
            if let Ok(f) = &f {
                ridge_applied = f.ridge_applied;
            }
            metrics.insert("fid".into(), f.map(|f| f.value).into());
            metrics.insert("diversity".into(), diversity(&g.vectors).into());
            metrics.insert("real_diversity".into(), diversity(&r.vectors).into());
            metrics.insert(
                "diversity_normalized".into(),
                standardize(&g.vectors, &r.vectors).and_then(|v| diversity(&v)).into(),
            );
            metrics.insert(
                "real_diversity_normalized".into(),
                standardize(&r.vectors, &r.vectors).and_then(|v| diversity(&v)).into(),
            );
        }
        (g, r) => {
            let reason = g.as_ref().err().or(r.as_ref().err()).map(|e| e.to_string()).unwrap_or_default();
            for name in ["fid", "diversity", "real_diversity", "diversity_normalized", "real_diversity_normalized"] {
                metrics.insert(name.into(), MetricValue::Error(format!("feature extraction failed: {reason}")));
            }
        }
    }

    let groups = caption_groups(generated, n);
    counts.insert("caption_groups".into(), groups.as_ref().map(Vec::len).unwrap_or(0));
    metrics.insert("mmdist".into(), groups.and_then(|g| mmodality(&g)).into());

    let iv = |set: &[HAOISequence]| mean_of(set.iter().map(|s| sequence_iv(s, &objects[&s.object.id], hand, config)));
    metrics.insert("iv_cm3".into(), iv(generated).into());
    metrics.insert("real_iv_cm3".into(), iv(real).into());

    let pairs = paired_errors(generated, real, n);
    counts.insert("trajectory_pairs".into(), pairs.as_ref().map(Vec::len).unwrap_or(0));
    let pairs = pairs.and_then(|p| {
        if p.is_empty() {
            Err(HaoiError::validation("no generated sequence names a real source sequence"))
        } else {
            Ok(p)
        }
    });
    let (ade, fde): (MetricValue, MetricValue) = match pairs {
        Ok(p) => {
            let k = p.len() as f64;
            (
                MetricValue::Value(p.iter().map(|e| e.0).sum::<f64>() / k),
                MetricValue::Value(p.iter().map(|e| e.1).sum::<f64>() / k),
            )
        }
        Err(e) => (MetricValue::Error(e.to_string()), MetricValue::Error(e.to_string())),
    };
    metrics.insert("ade".into(), ade);
    metrics.insert("fde".into(), fde);

    match &real_f {
        Ok(r) => {
            let c = cuc(&r.usage);
            metrics.insert("cuc".into(), MetricValue::Value(c.hand));
            metrics.insert("cuc_joint".into(), MetricValue::Value(c.joint));
        }
        Err(e) => {
            for name in ["cuc", "cuc_joint"] {
                metrics.insert(name.into(), MetricValue::Error(format!("feature extraction failed: {e}")));
            }
        }
    }
    let train_usage: [Vec<u64>; 4] = std::array::from_fn(|s| vq.books[s].usage_counts.clone());
    let c = cuc(&train_usage);
    metrics.insert("cuc_train".into(), MetricValue::Value(c.hand));
    metrics.insert("cuc_train_joint".into(), MetricValue::Value(c.joint));

    Ok(MetricsReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION.into(),
        counts,
        metrics,
        config: ConfigEcho {
            metrics: config.clone(),
            fid_ridge: FID_RIDGE,
            fid_ridge_applied: ridge_applied,
            extractor: extractor.into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuc_examples() {
        let mut counts = vec![0u64; 512];
        counts[..119].iter_mut().for_each(|c| *c = 3);
        assert!((cuc_single(&counts) - 119.0 / 512.0).abs() < 1e-15);
        assert_eq!(cuc_single(&[1, 1, 1]), 1.0);
        assert_eq!(cuc_single(&[0, 0]), 0.0);
        let r = cuc(&[vec![1, 0], vec![1, 1], vec![0, 0], vec![0, 5]]);
        assert!((r.hand - 0.5).abs() < 1e-15);
        assert_eq!(r.joint, 0.5);
    }
}
