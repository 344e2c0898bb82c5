//! Codebooks, nearest-entry quantization and dead-code reset.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HaoiError, Result};

/// The four token stages: global hand placement, local pose, refinement, joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    G,
    L,
    R,
    J,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::G, Stage::L, Stage::R, Stage::J];
    pub const HAND: [Stage; 3] = [Stage::G, Stage::L, Stage::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::G => "g",
            Stage::L => "l",
            Stage::R => "r",
            Stage::J => "j",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = HaoiError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| HaoiError::validation(format!("unknown stage '{s}'")))
    }
}

/// Discrete `⟨g, l, r, j⟩` token tuple of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenFrame {
    pub g: u32,
    pub l: u32,
    pub r: u32,
    pub j: u32,
}

impl TokenFrame {
    pub fn new(g: u32, l: u32, r: u32, j: u32) -> Self {
        Self { g, l, r, j }
    }

    pub fn get(&self, stage: Stage) -> u32 {
        match stage {
            Stage::G => self.g,
            Stage::L => self.l,
            Stage::R => self.r,
            Stage::J => self.j,
        }
    }

    /// Tokens in `g, l, r, j` order.
    pub fn as_array(&self) -> [u32; 4] {
        [self.g, self.l, self.r, self.j]
    }

    pub fn from_stages(tokens: [u32; 4]) -> Self {
        Self::new(tokens[0], tokens[1], tokens[2], tokens[3])
    }

    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        for stage in Stage::ALL {
            let t = self.get(stage);
            if t as usize >= codebook_size {
                return Err(HaoiError::validation(format!(
                    "{stage} token {t} out of range for codebook size {codebook_size}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub stage: Stage,
    pub dim: usize,
    /// Row-major `K × dim`.
    pub entries: Vec<f64>,
    pub usage_counts: Vec<u64>,
}

/// Outcome of a dead-code reset pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResetStatus {
    Reset { entries: Vec<usize> },
    /// The batch was empty; nothing changed.
    EmptyBatch,
}

impl Codebook {
    pub fn new(stage: Stage, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.is_empty() || entries.len() % dim != 0 {
            return Err(HaoiError::validation(format!(
                "codebook {stage}: {} values do not form rows of width {dim}",
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(HaoiError::validation(format!("codebook {stage} has non-finite entries")));
        }
        let k = entries.len() / dim;
        Ok(Self {
            stage,
            dim,
            entries,
            usage_counts: vec![0; k],
        })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random(stage: Stage, k: usize, dim: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let entries = (0..k * dim).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(stage, dim, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> &[f64] {
        &self.entries[index * self.dim..(index + 1) * self.dim]
    }

    /// Index of the nearest entry by squared Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, q: &[f64]) -> Result<(usize, f64)> {
        if q.len() != self.dim {
            return Err(HaoiError::validation(format!(
                "codebook {}: feature has dimension {}, expected {}",
                self.stage,
                q.len(),
                self.dim
            )));
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (t, row) in self.entries.chunks_exact(self.dim).enumerate() {
            let mut d = 0.0;
            for (a, b) in q.iter().zip(row) {
                let diff = a - b;
                d += diff * diff;
                if d >= best_d {
                    break;
                }
            }
            if d < best_d {
                best_d = d;
                best = t;
            }
        }
        Ok((best, best_d))
    }

    pub fn reset_usage(&mut self) {
        self.usage_counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Fraction of entries with a nonzero usage count.
    pub fn coverage(&self) -> f64 {
        crate::metrics::cuc_single(&self.usage_counts)
    }

    pub fn dead_entries(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| self.usage_counts[*i] == 0).collect()
    }

    /// Reassigns every unused entry to a randomly chosen feature from `batch`.
    pub fn reset_dead_codes(&mut self, batch: &[Vec<f64>], rng: &mut impl Rng) -> Result<ResetStatus> {
        if batch.is_empty() {
            log::warn!("codebook {}: dead-code reset skipped, empty batch", self.stage);
            return Ok(ResetStatus::EmptyBatch);
        }
        if let Some(f) = batch.iter().find(|f| f.len() != self.dim) {
            return Err(HaoiError::validation(format!(
                "codebook {}: reset feature has dimension {}, expected {}",
                self.stage,
                f.len(),
                self.dim
            )));
        }
        let dead = self.dead_entries();
        for &i in &dead {
            let src = &batch[rng.random_range(0..batch.len())];
            self.entries[i * self.dim..(i + 1) * self.dim].copy_from_slice(src);
        }
        Ok(ResetStatus::Reset { entries: dead })
    }
}

/// Nearest-entry quantization; increments the chosen entry's usage count.
pub fn quantize(q: &[f64], book: &mut Codebook) -> Result<(usize, Vec<f64>)> {
    let (index, _) = book.nearest(q)?;
    book.usage_counts[index] += 1;
    Ok((index, book.entry(index).to_vec()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn exact_entry_maps_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut book = Codebook::random(Stage::G, 16, 8, 1.0, &mut rng).unwrap();
        let q = book.entry(5).to_vec();
        let (i, v) = quantize(&q, &mut book).unwrap();
        assert_eq!(i, 5);
        assert_eq!(v, q);
        assert_eq!(book.nearest(&q).unwrap().1, 0.0);
        assert_eq!(book.usage_counts[5], 1);
    }

    #[test]
    fn two_entry_example() {
        let mut book = Codebook::new(Stage::L, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(quantize(&[0.4, 0.4], &mut book).unwrap().0, 0);
        // Equidistant: lowest index.
        assert_eq!(quantize(&[0.5, 0.5], &mut book).unwrap().0, 0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut book = Codebook::new(Stage::L, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(quantize(&[0.4], &mut book), Err(HaoiError::Validation(_))));
    }

    #[test]
    fn reset_only_touches_dead_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut book = Codebook::random(Stage::R, 8, 4, 1.0, &mut rng).unwrap();
        book.usage_counts = vec![1; 8];
        let before = book.clone();
        let batch: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64; 4]).collect();
        book.reset_dead_codes(&batch, &mut rng).unwrap();
        assert_eq!(book.entries, before.entries);

        book.usage_counts[3] = 0;
        let status = book.reset_dead_codes(&batch, &mut rng).unwrap();
        assert_eq!(status, ResetStatus::Reset { entries: vec![3] });
        assert!(batch.iter().any(|f| f.as_slice() == book.entry(3)));
        for i in (0..8).filter(|i| *i != 3) {
            assert_eq!(book.entry(i), before.entry(i));
        }
        assert_eq!(book.reset_dead_codes(&[], &mut rng).unwrap(), ResetStatus::EmptyBatch);
    }
}
