//! Line-record dataset files, manifests and object-stratified splits.
//!
//! A dataset directory holds `sequences.jsonl` (a header line followed by one
//! sequence per line) and `manifest.json`. Splits live in `splits.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{HAOIFrame, HAOISequence, ObjectRef, Provenance, TaskMeta};
use crate::articulated_object::{CanonicalTransform, JointState};
use crate::error::{HaoiError, Result};
use crate::hand_model::{GraspParams, Vec3, POSE_DIM};
use crate::records::Array2;
use crate::rng::seeded;

pub const FORMAT: &str = "haoi-sequences";
pub const VERSION: &str = "1";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: String,
    records: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameBlock {
    beta: Array2,
    joint_state: Array2,
    contact_point: Array2,
    canonical_t: Array2,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRecord {
    id: String,
    object: ObjectRef,
    caption: String,
    task_meta: TaskMeta,
    frame_count: usize,
    frames: FrameBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl SequenceRecord {
    fn from_sequence(seq: &HAOISequence) -> Self {
        let rows = |f: &dyn Fn(&HAOIFrame) -> Vec<f64>, width: usize| Array2 {
            shape: [seq.frames.len(), width],
            data: seq.frames.iter().flat_map(f).collect(),
        };
        Self {
            id: seq.id.clone(),
            object: seq.object.clone(),
            caption: seq.caption.clone(),
            task_meta: seq.task_meta.clone(),
            frame_count: seq.frames.len(),
            frames: FrameBlock {
                beta: rows(&|f| f.beta.to_vec(), POSE_DIM + 6),
                joint_state: rows(&|f| f.joint_state.0.iter().copied().collect(), 3),
                contact_point: rows(&|f| f.contact_point.iter().copied().collect(), 3),
                canonical_t: rows(&|f| f.canonical_t.to_row_major().to_vec(), 16),
            },
            provenance: seq.provenance.clone(),
        }
    }

    fn into_sequence(self) -> Result<HAOISequence> {
        let t = self.frame_count;
        let expect = |a: &Array2, width: usize, name: &str| -> Result<()> {
            a.check()?;
            if a.shape != [t, width] {
                return Err(HaoiError::validation(format!(
                    "{name} has shape {:?}, header declares {t} frames of width {width}",
                    a.shape
                )));
            }
            Ok(())
        };
        let b = &self.frames;
        expect(&b.beta, POSE_DIM + 6, "beta")?;
        expect(&b.joint_state, 3, "joint_state")?;
        expect(&b.contact_point, 3, "contact_point")?;
        expect(&b.canonical_t, 16, "canonical_t")?;
        let joints = b.joint_state.to_vec3s()?;
        let contacts = b.contact_point.to_vec3s()?;
        let mut frames = Vec::with_capacity(t);
        for ((beta, tf), (j, c)) in b.beta.rows().zip(b.canonical_t.rows()).zip(joints.into_iter().zip(contacts)) {
            frames.push(HAOIFrame {
                beta: GraspParams::from_slice(beta)?,
                joint_state: JointState(j),
                contact_point: c,
                canonical_t: CanonicalTransform::from_row_major(tf)?,
            });
        }
        let seq = HAOISequence {
            id: self.id,
            object: self.object,
            frames,
            caption: self.caption,
            task_meta: self.task_meta,
            provenance: self.provenance,
        };
        seq.validate()?;
        Ok(seq)
    }
}

/// Dataset-level facts recorded next to the sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub master_seed: u64,
    pub hand_model_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: String,
    pub split: String,
    /// Sequence count per split name.
    pub counts: BTreeMap<String, usize>,
    pub frame_count: usize,
    pub master_seed: u64,
    /// Per-object generation seeds.
    pub object_seeds: BTreeMap<String, u64>,
    pub categories: Vec<String>,
    pub hand_model_hash: String,
    pub sequences: Vec<SequenceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub object: String,
    pub category: String,
    pub frames: usize,
}

impl DatasetManifest {
    pub fn build(split: &str, sequences: &[HAOISequence], meta: &ManifestMeta) -> Self {
        let categories: BTreeSet<String> = sequences.iter().map(|s| s.object.category.to_string()).collect();
        Self {
            format: FORMAT.into(),
            version: VERSION.into(),
            split: split.into(),
            counts: BTreeMap::from([(split.to_string(), sequences.len())]),
            frame_count: sequences.iter().map(|s| s.frames.len()).sum(),
            master_seed: meta.master_seed,
            object_seeds: sequences.iter().map(|s| (s.object.id.clone(), s.object.seed)).collect(),
            categories: categories.into_iter().collect(),
            hand_model_hash: meta.hand_model_hash.clone(),
            sequences: sequences
                .iter()
                .map(|s| SequenceEntry {
                    id: s.id.clone(),
                    object: s.object.id.clone(),
                    category: s.object.category.to_string(),
                    frames: s.frames.len(),
                })
                .collect(),
        }
    }

    pub fn sequence_ids(&self) -> impl Iterator<Item = &str> {
        self.sequences.iter().map(|e| e.id.as_str())
    }

    pub fn object_ids(&self) -> Vec<String> {
        self.object_seeds.keys().cloned().collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HaoiError::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        check_version(&m.format, &m.version)?;
        Ok(m)
    }
}

fn check_version(format: &str, version: &str) -> Result<()> {
    if format != FORMAT || version != VERSION {
        return Err(HaoiError::Version {
            expected: format!("{FORMAT} {VERSION}"),
            found: format!("{format} {version}"),
        });
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HaoiError::io(path, e))
}

/// Writes `sequences.jsonl` and `manifest.json` into `dir`.
pub fn write_dataset(sequences: &[HAOISequence], dir: &Path, meta: &ManifestMeta) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| HaoiError::io(dir, e))?;
    let path = dir.join(SEQUENCES_FILE);
    let file = File::create(&path).map_err(|e| HaoiError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT.into(),
        version: VERSION.into(),
        records: sequences.len(),
    };
    let io = |e| HaoiError::io(&path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for seq in sequences {
        serde_json::to_writer(&mut w, &SequenceRecord::from_sequence(seq))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let manifest = DatasetManifest::build("all", sequences, meta);
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads every sequence in `dir`. Record indices in errors count from 0, header excluded.
pub fn read_dataset(dir: &Path) -> Result<Vec<HAOISequence>> {
    let path = dir.join(SEQUENCES_FILE);
    let file = File::open(&path).map_err(|e| HaoiError::io(&path, e))?;
    let mut lines = BufReader::new(file).lines();
    let corrupt = |index: usize, message: String| HaoiError::CorruptRecord {
        path: path.clone(),
        index,
        message,
    };
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| HaoiError::io(&path, e))?,
        None => return Err(corrupt(0, "missing header line".into())),
    };
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| corrupt(0, format!("unreadable header: {e}")))?;
    check_version(&header.format, &header.version)?;
    let mut out = Vec::with_capacity(header.records);
    for (index, line) in lines.enumerate() {
        let line = line.map_err(|e| HaoiError::io(&path, e))?;
        if index >= header.records {
            if line.trim().is_empty() {
                continue;
            }
            return Err(corrupt(index, format!("header declares {} records", header.records)));
        }
        let record: SequenceRecord = serde_json::from_str(&line).map_err(|e| corrupt(index, e.to_string()))?;
        out.push(record.into_sequence().map_err(|e| corrupt(index, e.to_string()))?);
    }
    if out.len() != header.records {
        return Err(corrupt(
            out.len(),
            format!("file ends after {} of {} records", out.len(), header.records),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifests {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

impl SplitManifests {
    pub fn get(&self, name: &str) -> Result<&DatasetManifest> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(HaoiError::validation(format!(
                "unknown split '{name}' (expected train, val or test)"
            ))),
        }
    }
}

/// Object-stratified partition; split sizes follow the ratios by largest remainder.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<SplitManifests> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(HaoiError::validation("split ratios must be nonnegative and sum to 1"));
    }
    let mut objects = manifest.object_ids();
    let wanted = ratios.iter().filter(|r| **r > 0.0).count();
    if objects.len() < wanted {
        return Err(HaoiError::validation(format!(
            "{} object instances cannot fill {wanted} nonempty splits",
            objects.len()
        )));
    }
    objects.shuffle(&mut seeded(seed));

    let n = objects.len();
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|a, b| (exact[*b] - sizes[*b] as f64).total_cmp(&(exact[*a] - sizes[*a] as f64)));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in &order {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|j| sizes[*j]).unwrap_or(0);
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }

    let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cursor = 0;
    for (split, size) in sizes.iter().enumerate() {
        for obj in &objects[cursor..cursor + size] {
            assignment.insert(obj.as_str(), split);
        }
        cursor += size;
    }

    let names = ["train", "val", "test"];
    let mut parts: Vec<DatasetManifest> = names
        .iter()
        .map(|name| DatasetManifest {
            split: name.to_string(),
            counts: BTreeMap::new(),
            frame_count: 0,
            object_seeds: BTreeMap::new(),
            categories: Vec::new(),
            sequences: Vec::new(),
            ..manifest.clone()
        })
        .collect();
    for entry in &manifest.sequences {
        let split = *assignment
            .get(entry.object.as_str())
            .ok_or_else(|| HaoiError::validation(format!("sequence {} names unknown object {}", entry.id, entry.object)))?;
        let part = &mut parts[split];
        part.sequences.push(entry.clone());
        part.object_seeds
            .insert(entry.object.clone(), manifest.object_seeds[&entry.object]);
    }
    for part in &mut parts {
        part.counts.insert(part.split.clone(), part.sequences.len());
        part.frame_count = part.sequences.iter().map(|e| e.frames).sum();
        let categories: BTreeSet<String> = part.sequences.iter().map(|e| e.category.clone()).collect();
        part.categories = categories.into_iter().collect();
    }
    let test = parts.pop().unwrap_or_else(|| unreachable!());
    let val = parts.pop().unwrap_or_else(|| unreachable!());
    let train = parts.pop().unwrap_or_else(|| unreachable!());
    Ok(SplitManifests { train, val, test })
}

pub fn write_splits(dir: &Path, splits: &SplitManifests) -> Result<()> {
    write_json(&dir.join(SPLITS_FILE), splits)
}

/// Sequences of one named split, in manifest order.
pub fn read_split(dir: &Path, split: &str) -> Result<Vec<HAOISequence>> {
    let path = dir.join(SPLITS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| HaoiError::io(&path, e))?;
    let splits: SplitManifests = serde_json::from_str(&text)?;
    let manifest = splits.get(split)?;
    check_version(&manifest.format, &manifest.version)?;
    let all = read_dataset(dir)?;
    let mut by_id: BTreeMap<String, HAOISequence> = all.into_iter().map(|s| (s.id.clone(), s)).collect();
    manifest
        .sequence_ids()
        .map(|id| {
            by_id
                .remove(id)
                .ok_or_else(|| HaoiError::validation(format!("split {split} lists missing sequence {id}")))
        })
        .collect()
}

/// Root positions (translation of β) per frame.
pub fn hand_positions(seq: &HAOISequence) -> Vec<Vec3> {
    seq.frames.iter().map(|f| f.beta.trans).collect()
}
