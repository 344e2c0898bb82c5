//! Decoder-only transformer over the joint text/motion vocabulary.

use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::prompt::Example;
use super::vocab::{Vocabulary, PAD};
use crate::error::{HaoiError, Result};
use crate::layers::{device, to_rows_f64, LayerNorm, Linear, ParamStore};
use crate::rng::{derive_seed, seeded};

pub const CHECKPOINT_FORMAT: &str = "haoi-lm";
pub const CHECKPOINT_VERSION: &str = "1";
const WEIGHTS_FILE: &str = "weights.safetensors";
const META_FILE: &str = "lm.json";
/// Name prefix of the token embedding table, frozen in stage 2.
pub const EMBEDDING: &str = "embed.tokens";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// 0 selects greedy decoding.
    pub temperature: f64,
    pub top_p: f64,
    /// Hard cap on generated frames.
    pub max_frames: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 0.9,
            max_frames: crate::synth_data::MAX_FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub context: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Length of the masked interpolation span as a fraction of the sequence.
    pub mask_fraction: f64,
    pub sampling: SamplingConfig,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            width: 256,
            context: 512,
            learning_rate: 3e-4,
            batch_size: 128,
            epochs: 20,
            mask_fraction: 0.45,
            sampling: SamplingConfig::default(),
        }
    }
}

impl LmConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (name, v) in [
            ("layers", self.layers),
            ("heads", self.heads),
            ("width", self.width),
            ("context", self.context),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                p.push(format!("lm.{name}: must be positive"));
            }
        }
        if self.heads > 0 && self.width % self.heads != 0 {
            p.push(format!("lm.width: {} is not divisible by lm.heads = {}", self.width, self.heads));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            p.push(format!("lm.learning_rate: must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            p.push(format!("lm.mask_fraction: must lie in [0, 1], got {}", self.mask_fraction));
        }
        let s = &self.sampling;
        if !(s.temperature.is_finite() && s.temperature >= 0.0) {
            p.push(format!("lm.sampling.temperature: must be nonnegative, got {}", s.temperature));
        }
        if !(s.top_p > 0.0 && s.top_p <= 1.0) {
            p.push(format!("lm.sampling.top_p: must lie in (0, 1], got {}", s.top_p));
        }
        if s.max_frames == 0 {
            p.push("lm.sampling.max_frames: must be positive".into());
        }
        p
    }
}

struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    up: Linear,
    down: Linear,
}

pub struct TransformerLm {
    pub config: LmConfig,
    pub vocab: Vocabulary,
    /// Training stages completed (1 or 2), 0 when untrained.
    pub stage: u8,
    /// Content hash of the VQ-VAE checkpoint the motion tokens come from.
    pub vqvae_hash: String,
    pub seed: u64,
    store: ParamStore,
    embed: Tensor,
    position: Tensor,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    format: String,
    version: String,
    config: LmConfig,
    vocab: Vocabulary,
    stage: u8,
    vqvae_hash: String,
    seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmEpochStats {
    pub stage: u8,
    pub epoch: usize,
    /// Mean per-token negative log-likelihood over target positions.
    pub nll: f64,
}

impl TransformerLm {
    pub fn new(config: &LmConfig, vocab: Vocabulary, vqvae_hash: &str, seed: u64) -> Result<Self> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(HaoiError::validation(problems.join("; ")));
        }
        let mut rng = seeded(derive_seed(seed, &[0x6c6d, 1]));
        let mut store = ParamStore::new();
        let w = config.width;
        let v = vocab.len();
        let embed = store
            .uniform(EMBEDDING, &[v, w], 0.02 * 3f64.sqrt(), &mut rng)?
            .as_tensor()
            .clone();
        let position = store
            .uniform("embed.position", &[config.context, w], 0.02 * 3f64.sqrt(), &mut rng)?
            .as_tensor()
            .clone();
        let blocks = (0..config.layers)
            .map(|i| {
                let n = format!("block{i}");
                Ok(Block {
                    ln1: LayerNorm::new(&mut store, &format!("{n}.ln1"), w)?,
                    qkv: Linear::new(&mut store, &format!("{n}.qkv"), w, 3 * w, &mut rng)?,
                    proj: Linear::new(&mut store, &format!("{n}.proj"), w, w, &mut rng)?,
                    ln2: LayerNorm::new(&mut store, &format!("{n}.ln2"), w)?,
                    up: Linear::new(&mut store, &format!("{n}.up"), w, 4 * w, &mut rng)?,
                    down: Linear::new(&mut store, &format!("{n}.down"), 4 * w, w, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(&mut store, "ln_f", w)?;
        // Zero output layer: an untrained model predicts the uniform distribution.
        let head = Linear::zeros(&mut store, "head", w, v)?;
        Ok(Self {
            config: config.clone(),
            vocab,
            stage: 0,
            vqvae_hash: vqvae_hash.to_string(),
            seed,
            store,
            embed,
            position,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Copy of the token embedding table.
    pub fn embedding_table(&self) -> Result<Vec<f32>> {
        Ok(self.embed.flatten_all()?.to_vec1::<f32>()?)
    }

    /// Logits `[B, L, V]` for right-padded id rows of equal length.
    fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        if l > self.config.context {
            return Err(HaoiError::ContextOverflow {
                needed: l,
                context: self.config.context,
            });
        }
        let w = self.config.width;
        let h = self.config.heads;
        let dh = w / h;
        let tok = self.embed.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, w))?;
        let mut x = tok.broadcast_add(&self.position.narrow(0, 0, l)?)?;
        let mask = causal_mask(l)?;
        let scale = 1.0 / (dh as f64).sqrt();
        for block in &self.blocks {
            let y = block.ln1.forward(&x)?;
            let qkv = block.qkv.forward(&y)?.reshape((b, l, 3, h, dh))?;
            let q = qkv.narrow(2, 0, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
            let k = qkv.narrow(2, 1, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
            let v = qkv.narrow(2, 2, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
            let scores = (q.matmul(&k.t()?)? * scale)?.broadcast_add(&mask)?;
            let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
            let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, w))?;
            x = (x + block.proj.forward(&ctx)?)?;
            let y = block.ln2.forward(&x)?;
            let y = block.down.forward(&block.up.forward(&y)?.gelu_erf()?)?;
            x = (x + y)?;
        }
        self.head.forward(&self.ln_f.forward(&x)?)
    }

    /// Next-token logits after `context`.
    pub fn next_logits(&self, context: &[u32]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(HaoiError::validation("empty context"));
        }
        let ids = Tensor::from_vec(context.to_vec(), (1, context.len()), &device())?;
        let logits = self.forward(&ids)?;
        let last = logits.narrow(1, context.len() - 1, 1)?.squeeze(1)?;
        Ok(to_rows_f64(&last)?.remove(0))
    }

    /// Logits at every position of one id row, `[L][V]`.
    pub fn all_logits(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        let t = Tensor::from_vec(ids.to_vec(), (1, ids.len()), &device())?;
        to_rows_f64(&self.forward(&t)?.squeeze(0)?)
    }

    /// Summed target NLL of one example, evaluated in f64 from the logits.
    pub fn example_nll(&self, ex: &Example) -> Result<f64> {
        let (input, _) = example_rows(ex);
        let logits = self.all_logits(&input)?;
        let start = ex.prompt.len() - 1;
        Ok(nll_from_logits(&logits[start..start + ex.target.len()], &ex.target))
    }

    fn batch_loss(&self, examples: &[&Example]) -> Result<(Tensor, f64, usize)> {
        let rows: Vec<(Vec<u32>, Vec<f32>)> = examples.iter().map(|e| example_rows(e)).collect();
        let l = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let b = rows.len();
        let mut ids = Vec::with_capacity(b * l);
        let mut targets = Vec::with_capacity(b * l);
        let mut weights = Vec::with_capacity(b * l);
        for ((input, w), ex) in rows.iter().zip(examples) {
            let mut tgt = vec![PAD; l];
            let start = ex.prompt.len() - 1;
            tgt[start..start + ex.target.len()].copy_from_slice(&ex.target);
            ids.extend_from_slice(input);
            ids.extend(std::iter::repeat_n(PAD, l - input.len()));
            targets.extend(tgt);
            weights.extend_from_slice(w);
            weights.extend(std::iter::repeat_n(0.0, l - w.len()));
        }
        let count = weights.iter().filter(|w| **w > 0.0).count();
        let dev = device();
        let logits = self.forward(&Tensor::from_vec(ids, (b, l), &dev)?)?;
        let logp = candle_nn::ops::log_softmax(&logits.reshape((b * l, self.vocab_size()))?, D::Minus1)?;
        let picked = logp
            .gather(&Tensor::from_vec(targets, (b * l, 1), &dev)?, 1)?
            .squeeze(1)?;
        let w = Tensor::from_vec(weights, b * l, &dev)?;
        let total = (picked * w)?.sum_all()?.neg()?;
        let mean = (total / count.max(1) as f64)?;
        let value = f64::from(mean.to_dtype(DType::F32)?.to_scalar::<f32>()?);
        Ok((mean, value, count))
    }

    fn optimizer(&self) -> Result<AdamW> {
        let params = ParamsAdamW {
            lr: self.config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(AdamW::new(self.store.trainable(), params)?)
    }

    /// Trains for `epochs` passes over `examples`. Stage 2 freezes the embedding table.
    pub fn train(
        &mut self,
        examples: &[Example],
        stage: u8,
        epochs: usize,
        mut on_epoch: impl FnMut(&LmEpochStats),
    ) -> Result<Vec<LmEpochStats>> {
        match stage {
            1 => {}
            2 if self.stage >= 1 => self.store.freeze_prefix(EMBEDDING),
            2 => return Err(HaoiError::validation("stage 2 requires a stage-1 checkpoint")),
            s => return Err(HaoiError::validation(format!("unknown training stage {s}"))),
        }
        if examples.is_empty() {
            return Err(HaoiError::validation("no training examples"));
        }
        if let Some(e) = examples.iter().find(|e| e.len() - 1 > self.config.context) {
            return Err(HaoiError::ContextOverflow {
                needed: e.len() - 1,
                context: self.config.context,
            });
        }
        let mut opt = self.optimizer()?;
        let mut trace = Vec::with_capacity(epochs);
        let mut batch_index = 0usize;
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut seeded(derive_seed(self.seed, &[0x6c6d, 2, stage as u64, epoch as u64])));
            let mut sum = 0.0;
            let mut tokens = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
                let (loss, value, count) = self.batch_loss(&batch)?;
                if !value.is_finite() {
                    return Err(HaoiError::NonFinite {
                        term: "nll".into(),
                        detail: format!("stage {stage} epoch {epoch} batch {batch_index}"),
                    });
                }
                opt.backward_step(&loss)?;
                sum += value * count as f64;
                tokens += count;
                batch_index += 1;
            }
            let stats = LmEpochStats {
                stage,
                epoch,
                nll: sum / tokens.max(1) as f64,
            };
            on_epoch(&stats);
            trace.push(stats);
        }
        self.stage = stage;
        Ok(trace)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| HaoiError::io(dir, e))?;
        self.store.save(&dir.join(WEIGHTS_FILE))?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION.into(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            stage: self.stage,
            vqvae_hash: self.vqvae_hash.clone(),
            seed: self.seed,
        };
        let path = dir.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| HaoiError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HaoiError::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(HaoiError::validation(format!("{} is not a language-model checkpoint", path.display())));
        }
        let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
        if version != CHECKPOINT_VERSION {
            return Err(HaoiError::Version {
                expected: CHECKPOINT_VERSION.into(),
                found: version.into(),
            });
        }
        let meta: CheckpointMeta = serde_json::from_value(value)?;
        let vocab = meta.vocab;
        let mut model = Self::new(&meta.config, vocab, &meta.vqvae_hash, meta.seed)?;
        model.store.load(&dir.join(WEIGHTS_FILE))?;
        model.stage = meta.stage;
        Ok(model)
    }

    /// Fails with a version error when `hash` is not the VQ-VAE this model was trained on.
    pub fn check_vqvae(&self, hash: &str) -> Result<()> {
        if hash != self.vqvae_hash {
            return Err(HaoiError::Version {
                expected: self.vqvae_hash.clone(),
                found: hash.to_string(),
            });
        }
        Ok(())
    }
}

/// `[0, -inf]` causal mask `[L, L]`.
fn causal_mask(l: usize) -> Result<Tensor> {
    let values: Vec<f32> = (0..l)
        .flat_map(|i| (0..l).map(move |j| if j <= i { 0.0 } else { f32::NEG_INFINITY }))
        .collect();
    Ok(Tensor::from_vec(values, (l, l), &device())?)
}

/// Model input (prompt plus all but the last target id) and per-position loss weights.
fn example_rows(ex: &Example) -> (Vec<u32>, Vec<f32>) {
    let mut input = ex.prompt.clone();
    input.extend_from_slice(&ex.target[..ex.target.len() - 1]);
    let mut weights = vec![0.0; input.len()];
    for w in &mut weights[ex.prompt.len() - 1..] {
        *w = 1.0;
    }
    (input, weights)
}

/// `−Σ log softmax(logits_i)[target_i]` in f64.
pub fn nll_from_logits(logits: &[Vec<f64>], targets: &[u32]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(row, &t)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            lse - row[t as usize]
        })
        .sum()
}
