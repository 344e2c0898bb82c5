//! Multi-stage VQ-VAE: encoders, codebooks, decoders, training and checkpoints.

use std::fs;
use std::path::Path;

use candle_core::{Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, Stage, TokenFrame};
use super::losses::{frame_loss, LossBreakdown, LossWeights, StageOutputs};
use super::samples::{ObjectContext, SampleSet, POINT_FEATURES};
use crate::articulated_object::CanonicalTransform;
use crate::error::{HaoiError, Result};
use crate::hand_model::{rodrigues, rotation_to_axis_angle, GraspParams, HandModelSpec, Vec3, POSE_DIM};
use crate::layers::{device, tensor2, to_rows_f64, Mlp, ParamStore};
use crate::rng::{derive_seed, seeded};

pub const CHECKPOINT_FORMAT: &str = "haoi-vqvae";
pub const CHECKPOINT_VERSION: &str = "1";
const WEIGHTS_FILE: &str = "weights.safetensors";
const META_FILE: &str = "vqvae.json";
const BETA_DIM: usize = 96;
const INFERENCE_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqVaeConfig {
    pub codebook_size: usize,
    pub code_dim: usize,
    pub hidden: usize,
    /// Hidden widths of the shared per-point network.
    pub point_widths: Vec<usize>,
    pub n_points: usize,
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of `learning_rate`, reached by cosine decay.
    pub final_lr_ratio: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// One codebook for all four stages.
    pub shared_codebook: bool,
    /// Global and local encoders see only their own parameter groups.
    pub stage_semantics: bool,
    pub reset_dead_codes: bool,
    /// Scale of the uniform codebook initialization.
    pub codebook_init: f64,
    pub weights: LossWeights,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            codebook_size: 1024,
            code_dim: 512,
            hidden: 512,
            point_widths: vec![64, 128],
            n_points: 2048,
            learning_rate: 2e-5,
            final_lr_ratio: 1.0,
            batch_size: 128,
            epochs: 100,
            shared_codebook: false,
            stage_semantics: true,
            reset_dead_codes: true,
            codebook_init: 1.0 / 512.0,
            weights: LossWeights::default(),
        }
    }
}

impl VqVaeConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (name, v) in [
            ("codebook_size", self.codebook_size),
            ("code_dim", self.code_dim),
            ("hidden", self.hidden),
            ("n_points", self.n_points),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                p.push(format!("vqvae.{name}: must be positive"));
            }
        }
        if self.codebook_size > u32::MAX as usize {
            p.push("vqvae.codebook_size: too large".into());
        }
        if self.point_widths.contains(&0) {
            p.push("vqvae.point_widths: widths must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            p.push(format!("vqvae.learning_rate: must be positive, got {}", self.learning_rate));
        }
        if !(self.final_lr_ratio.is_finite() && self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0) {
            p.push(format!("vqvae.final_lr_ratio: must be in (0, 1], got {}", self.final_lr_ratio));
        }
        if !(self.codebook_init.is_finite() && self.codebook_init >= 0.0) {
            p.push(format!("vqvae.codebook_init: must be nonnegative, got {}", self.codebook_init));
        }
        p.extend(self.weights.problems());
        p
    }
}

/// Tokens and pre-quantization features of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub tokens: TokenFrame,
    pub features: [Vec<f64>; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub total: f64,
    /// Fraction of entries used during the epoch, per stage.
    pub coverage: [f64; 4],
    pub reset: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    format: String,
    version: String,
    config: VqVaeConfig,
    hand_model_hash: String,
    seed: u64,
    epochs_trained: usize,
    usage: Vec<Vec<u64>>,
}

struct Batch {
    clouds: Tensor,
    rest: Tensor,
    rest_index: Tensor,
    contact: Tensor,
    beta: Tensor,
}

struct Decoded {
    global: Tensor,
    local: Tensor,
    refine: Tensor,
    joint: Tensor,
}

pub struct VqVae {
    pub config: VqVaeConfig,
    pub hand_model_hash: String,
    pub seed: u64,
    pub epochs_trained: usize,
    /// f64 mirrors of the codebook parameters, with usage counts.
    pub books: [Codebook; 4],
    store: ParamStore,
    point: Mlp,
    enc_g: Mlp,
    enc_l: Mlp,
    enc_r: Mlp,
    enc_j: Mlp,
    dec_g: Mlp,
    dec_l: Mlp,
    dec_r: Mlp,
    dec_j: Mlp,
    code_vars: Vec<Var>,
}

fn widths(input: usize, hidden: usize, output: usize) -> Vec<usize> {
    vec![input, hidden, hidden, output]
}

impl VqVae {
    pub fn new(config: &VqVaeConfig, hand: &HandModelSpec, seed: u64) -> Result<Self> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(HaoiError::validation(problems.join("; ")));
        }
        let mut rng = seeded(derive_seed(seed, &[0x7671, 1]));
        let mut store = ParamStore::new();
        let (d, h) = (config.code_dim, config.hidden);
        let mut pw = vec![POINT_FEATURES];
        pw.extend(&config.point_widths);
        pw.push(d);
        let point = Mlp::new(&mut store, "enc.point", &pw, &mut rng)?;
        let (g_in, l_in) = if config.stage_semantics { (6, POSE_DIM) } else { (BETA_DIM, BETA_DIM) };
        let enc_g = Mlp::new(&mut store, "enc.g", &widths(g_in, h, d), &mut rng)?;
        let enc_l = Mlp::new(&mut store, "enc.l", &widths(l_in, h, d), &mut rng)?;
        let enc_r = Mlp::new(&mut store, "enc.r", &widths(BETA_DIM, h, d), &mut rng)?;
        let enc_j = Mlp::new(&mut store, "enc.j", &widths(d + 3, h, d), &mut rng)?;
        let dec_g = Mlp::new(&mut store, "dec.g", &widths(2 * d, h, 6), &mut rng)?;
        let dec_l = Mlp::new(&mut store, "dec.l", &widths(3 * d, h, POSE_DIM), &mut rng)?;
        let dec_r = Mlp::with_zero_output(&mut store, "dec.r", &widths(4 * d, h, BETA_DIM), &mut rng)?;
        let dec_j = Mlp::new(&mut store, "dec.j", &widths(2 * d, h, 3), &mut rng)?;

        let k = config.codebook_size;
        let names: Vec<&str> = if config.shared_codebook { vec!["shared"] } else { vec!["g", "l", "r", "j"] };
        let mut code_vars = Vec::new();
        let mut first: Option<Codebook> = None;
        let mut books = Vec::new();
        for (i, stage) in Stage::ALL.into_iter().enumerate() {
            let book = match (&first, config.shared_codebook) {
                (Some(b), true) => Codebook::new(stage, d, b.entries.clone())?,
                _ => Codebook::random(stage, k, d, config.codebook_init, &mut rng)?,
            };
            if i < names.len() {
                let values = book.entries.iter().map(|x| *x as f32).collect();
                code_vars.push(store.add(format!("codebook.{}", names[i]), &[k, d], values)?);
            }
            if first.is_none() {
                first = Some(book.clone());
            }
            books.push(book);
        }
        let mut model = Self {
            config: config.clone(),
            hand_model_hash: hand.hash(),
            seed,
            epochs_trained: 0,
            books: books.try_into().map_err(|_| HaoiError::Invariant("four codebooks".into()))?,
            store,
            point,
            enc_g,
            enc_l,
            enc_r,
            enc_j,
            dec_g,
            dec_l,
            dec_r,
            dec_j,
            code_vars,
        };
        model.sync_books_from_vars()?;
        Ok(model)
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    fn code_var(&self, stage: Stage) -> &Var {
        if self.config.shared_codebook {
            &self.code_vars[0]
        } else {
            &self.code_vars[stage.index()]
        }
    }

    fn sync_books_from_vars(&mut self) -> Result<()> {
        for stage in Stage::ALL {
            let rows = to_rows_f64(self.code_var(stage).as_tensor())?;
            self.books[stage.index()].entries = rows.concat();
        }
        Ok(())
    }

    fn sync_vars_from_books(&self) -> Result<()> {
        let stages: &[Stage] = if self.config.shared_codebook { &[Stage::G] } else { &Stage::ALL };
        for &stage in stages {
            let book = &self.books[stage.index()];
            let values = book.entries.iter().map(|x| *x as f32).collect();
            self.code_var(stage)
                .set(&tensor2(values, book.len(), book.dim)?)?;
        }
        Ok(())
    }

    pub fn check_hand(&self, hand: &HandModelSpec) -> Result<()> {
        if hand.hash() != self.hand_model_hash {
            return Err(HaoiError::validation(format!(
                "hand model hash {} does not match checkpoint hash {}",
                hand.hash(),
                self.hand_model_hash
            )));
        }
        Ok(())
    }

    fn pool(&self, clouds: &Tensor) -> Result<Tensor> {
        Ok(self.point.forward(clouds)?.max(1)?)
    }

    fn make_batch(&self, set: &SampleSet, idx: &[usize]) -> Result<Batch> {
        let n = self.config.n_points;
        let b = idx.len();
        let mut clouds = Vec::with_capacity(b * n * POINT_FEATURES);
        let mut contexts: Vec<usize> = Vec::new();
        let mut rest_index = Vec::with_capacity(b);
        let mut contact = Vec::with_capacity(b * 3);
        let mut beta = Vec::with_capacity(b * BETA_DIM);
        for &i in idx {
            let s = &set.frames[i];
            check_cloud(&s.cloud, n)?;
            clouds.extend_from_slice(&s.cloud);
            let pos = match contexts.iter().position(|c| *c == s.context) {
                Some(p) => p,
                None => {
                    contexts.push(s.context);
                    contexts.len() - 1
                }
            };
            rest_index.push(pos as u32);
            contact.extend(s.contact.iter().map(|x| *x as f32));
            beta.extend(s.beta().to_vec().into_iter().map(|x| x as f32));
        }
        let mut rest = Vec::with_capacity(contexts.len() * n * POINT_FEATURES);
        for &c in &contexts {
            check_cloud(&set.contexts[c].cloud, n)?;
            rest.extend_from_slice(&set.contexts[c].cloud);
        }
        let dev = device();
        Ok(Batch {
            clouds: Tensor::from_vec(clouds, (b, n, POINT_FEATURES), &dev)?,
            rest: Tensor::from_vec(rest, (contexts.len(), n, POINT_FEATURES), &dev)?,
            rest_index: Tensor::from_vec(rest_index, b, &dev)?,
            contact: tensor2(contact, b, 3)?,
            beta: tensor2(beta, b, BETA_DIM)?,
        })
    }

    /// Pre-quantization features `[q_g, q_l, q_r, q_j]` and the object condition.
    fn encode(&self, batch: &Batch) -> Result<([Tensor; 4], Tensor)> {
        let pooled = self.pool(&batch.clouds)?;
        let c_o = self.pool(&batch.rest)?.index_select(&batch.rest_index, 0)?;
        let q_j = self.enc_j.forward(&Tensor::cat(&[&pooled, &batch.contact], 1)?)?;
        let (g_in, l_in) = if self.config.stage_semantics {
            let rot = batch.beta.narrow(1, 0, 3)?;
            let pose = batch.beta.narrow(1, 3, POSE_DIM)?;
            let trans = batch.beta.narrow(1, 3 + POSE_DIM, 3)?;
            (Tensor::cat(&[&rot, &trans], 1)?, pose)
        } else {
            (batch.beta.clone(), batch.beta.clone())
        };
        let q_g = self.enc_g.forward(&g_in)?;
        let q_l = self.enc_l.forward(&l_in)?;
        let q_r = self.enc_r.forward(&batch.beta)?;
        Ok(([q_g, q_l, q_r, q_j], c_o))
    }

    fn decode(&self, codes: &[Tensor; 4], c_o: &Tensor) -> Result<Decoded> {
        let [g, l, r, j] = codes;
        Ok(Decoded {
            global: self.dec_g.forward(&Tensor::cat(&[g, j], 1)?)?,
            local: self.dec_l.forward(&Tensor::cat(&[g, l, j], 1)?)?,
            refine: self.dec_r.forward(&Tensor::cat(&[g, l, r, j], 1)?)?,
            joint: self.dec_j.forward(&Tensor::cat(&[j, c_o], 1)?)?,
        })
    }

    fn outputs(decoded: &Decoded) -> Result<Vec<StageOutputs>> {
        let g = to_rows_f64(&decoded.global)?;
        let l = to_rows_f64(&decoded.local)?;
        let r = to_rows_f64(&decoded.refine)?;
        let j = to_rows_f64(&decoded.joint)?;
        Ok((0..g.len())
            .map(|i| StageOutputs {
                rot: Vec3::new(g[i][0], g[i][1], g[i][2]),
                trans: Vec3::new(g[i][3], g[i][4], g[i][5]),
                pose: std::array::from_fn(|k| l[i][k]),
                delta_rot: Vec3::new(r[i][0], r[i][1], r[i][2]),
                delta_pose: std::array::from_fn(|k| 1.0 + r[i][3 + k]),
                delta_trans: Vec3::new(r[i][3 + POSE_DIM], r[i][4 + POSE_DIM], r[i][5 + POSE_DIM]),
                joint: Vec3::new(j[i][0], j[i][1], j[i][2]),
            })
            .collect())
    }

    /// Nearest entries for each stage's feature rows.
    fn assign(&self, features: &[Vec<Vec<f64>>; 4]) -> Result<[Vec<u32>; 4]> {
        let mut out: [Vec<u32>; 4] = Default::default();
        for stage in Stage::ALL {
            let book = &self.books[stage.index()];
            out[stage.index()] = features[stage.index()]
                .iter()
                .map(|q| book.nearest(q).map(|(i, _)| i as u32))
                .collect::<Result<_>>()?;
        }
        Ok(out)
    }

    fn lookup(&self, stage: Stage, ids: &[u32]) -> Result<Tensor> {
        let ids = Tensor::from_vec(ids.to_vec(), ids.len(), &device())?;
        Ok(self.code_var(stage).as_tensor().index_select(&ids, 0)?)
    }

    pub fn encode_samples(&self, set: &SampleSet, idx: &[usize]) -> Result<Vec<EncodedFrame>> {
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(INFERENCE_BATCH) {
            let batch = self.make_batch(set, chunk)?;
            let (q, _) = self.encode(&batch)?;
            let features: [Vec<Vec<f64>>; 4] = [
                to_rows_f64(&q[0])?,
                to_rows_f64(&q[1])?,
                to_rows_f64(&q[2])?,
                to_rows_f64(&q[3])?,
            ];
            let ids = self.assign(&features)?;
            for i in 0..chunk.len() {
                out.push(EncodedFrame {
                    tokens: TokenFrame::new(ids[0][i], ids[1][i], ids[2][i], ids[3][i]),
                    features: std::array::from_fn(|s| features[s][i].clone()),
                });
            }
        }
        Ok(out)
    }

    pub fn encode_all(&self, set: &SampleSet) -> Result<Vec<EncodedFrame>> {
        self.encode_samples(set, &(0..set.len()).collect::<Vec<_>>())
    }

    /// Object condition `C_O` of a context.
    pub fn object_condition(&self, context: &ObjectContext) -> Result<Vec<f64>> {
        check_cloud(&context.cloud, self.config.n_points)?;
        let cloud = Tensor::from_vec(context.cloud.clone(), (1, self.config.n_points, POINT_FEATURES), &device())?;
        Ok(to_rows_f64(&self.pool(&cloud)?)?.remove(0))
    }

    /// `(j, C_O)` for one articulated cloud and canonical contact.
    pub fn encode_joint(&self, cloud: &[f32], contact: &Vec3, context: &ObjectContext) -> Result<(u32, Vec<f64>)> {
        check_cloud(cloud, self.config.n_points)?;
        let n = self.config.n_points;
        let pooled = self.pool(&Tensor::from_vec(cloud.to_vec(), (1, n, POINT_FEATURES), &device())?)?;
        let c = tensor2(contact.iter().map(|x| *x as f32).collect(), 1, 3)?;
        let q = to_rows_f64(&self.enc_j.forward(&Tensor::cat(&[&pooled, &c], 1)?)?)?.remove(0);
        let (j, _) = self.books[Stage::J.index()].nearest(&q)?;
        Ok((j as u32, self.object_condition(context)?))
    }

    fn check_token(&self, stage: Stage, t: u32) -> Result<()> {
        if t as usize >= self.config.codebook_size {
            return Err(HaoiError::validation(format!(
                "{stage} token {t} out of range for codebook size {}",
                self.config.codebook_size
            )));
        }
        Ok(())
    }

    pub fn decode_joint(&self, j: u32, c_o: &[f64]) -> Result<Vec3> {
        self.check_token(Stage::J, j)?;
        if c_o.len() != self.config.code_dim {
            return Err(HaoiError::validation("object condition has the wrong dimension"));
        }
        let code = self.lookup(Stage::J, &[j])?;
        let c = tensor2(c_o.iter().map(|x| *x as f32).collect(), 1, c_o.len())?;
        let r = to_rows_f64(&self.dec_j.forward(&Tensor::cat(&[&code, &c], 1)?)?)?;
        Ok(Vec3::new(r[0][0], r[0][1], r[0][2]))
    }

    /// Raw stage outputs for token frames decoded against one object condition.
    pub fn decode_frames(&self, frames: &[TokenFrame], c_o: &[f64]) -> Result<Vec<StageOutputs>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        if c_o.len() != self.config.code_dim {
            return Err(HaoiError::validation("object condition has the wrong dimension"));
        }
        for f in frames {
            for stage in Stage::ALL {
                self.check_token(stage, f.get(stage))?;
            }
        }
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(INFERENCE_BATCH) {
            let codes: [Tensor; 4] = [
                self.lookup(Stage::G, &chunk.iter().map(|f| f.g).collect::<Vec<_>>())?,
                self.lookup(Stage::L, &chunk.iter().map(|f| f.l).collect::<Vec<_>>())?,
                self.lookup(Stage::R, &chunk.iter().map(|f| f.r).collect::<Vec<_>>())?,
                self.lookup(Stage::J, &chunk.iter().map(|f| f.j).collect::<Vec<_>>())?,
            ];
            let c = tensor2(
                c_o.iter().map(|x| *x as f32).cycle().take(chunk.len() * c_o.len()).collect(),
                chunk.len(),
                c_o.len(),
            )?;
            out.extend(Self::outputs(&self.decode(&codes, &c)?)?);
        }
        Ok(out)
    }

    /// Canonical grasp parameters `β̂` for one token frame.
    pub fn decode_stages(&self, g: u32, l: u32, r: u32, j: u32, c_o: &[f64]) -> Result<GraspParams> {
        Ok(self.decode_frames(&[TokenFrame::new(g, l, r, j)], c_o)?[0].final_beta())
    }

    /// One optimization step; returns the batch-mean losses and the features used.
    fn train_step(
        &mut self,
        set: &SampleSet,
        idx: &[usize],
        hand: &HandModelSpec,
        opt: &mut AdamW,
    ) -> Result<(LossBreakdown, [Vec<Vec<f64>>; 4])> {
        let b = idx.len();
        let batch = self.make_batch(set, idx)?;
        let (q, c_o) = self.encode(&batch)?;
        let features: [Vec<Vec<f64>>; 4] = [
            to_rows_f64(&q[0])?,
            to_rows_f64(&q[1])?,
            to_rows_f64(&q[2])?,
            to_rows_f64(&q[3])?,
        ];
        let ids = self.assign(&features)?;
        let beta = self.config.weights.beta_commit;
        let mut straight = Vec::with_capacity(4);
        let mut commitment: Option<Tensor> = None;
        for stage in Stage::ALL {
            let s = stage.index();
            for &i in &ids[s] {
                self.books[s].usage_counts[i as usize] += 1;
            }
            let q_hat = self.lookup(stage, &ids[s])?;
            let qs = &q[s];
            straight.push((qs + (&q_hat - qs)?.detach())?);
            let (codebook_term, encoder_term) = commitment_terms(qs, &q_hat, beta)?;
            let term = (codebook_term + encoder_term)?;
            commitment = Some(match commitment {
                Some(c) => (c + term)?,
                None => term,
            });
        }
        let commitment = commitment.ok_or_else(|| HaoiError::Invariant("no stages".into()))?;
        let codes: [Tensor; 4] = straight.try_into().map_err(|_| HaoiError::Invariant("four stages".into()))?;
        let decoded = self.decode(&codes, &c_o)?;
        let outputs = Self::outputs(&decoded)?;

        let w = &self.config.weights;
        let mut mean = LossBreakdown::default();
        let mut g_global = Vec::with_capacity(b * 6);
        let mut g_local = Vec::with_capacity(b * POSE_DIM);
        let mut g_refine = Vec::with_capacity(b * BETA_DIM);
        let mut g_joint = Vec::with_capacity(b * 3);
        let scale = 1.0 / b as f64;
        for (k, &i) in idx.iter().enumerate() {
            let (losses, grad) = frame_loss(&outputs[k], &set.frames[i].target, hand, w);
            mean.accumulate(&losses, scale);
            g_global.extend(grad.rot.iter().chain(grad.trans.iter()).map(|x| (x * scale) as f32));
            g_local.extend(grad.pose.iter().map(|x| (x * scale) as f32));
            g_refine.extend(
                grad.delta_rot
                    .iter()
                    .chain(grad.delta_pose.iter())
                    .chain(grad.delta_trans.iter())
                    .map(|x| (x * scale) as f32),
            );
            g_joint.extend(grad.joint.iter().map(|x| (x * scale) as f32));
        }
        mean.commitment = f64::from(commitment.to_scalar::<f32>()?);
        if let Some(term) = mean.first_non_finite() {
            return Err(HaoiError::NonFinite {
                term: term.to_string(),
                detail: format!("epoch {}", self.epochs_trained),
            });
        }
        let surrogate = ((&decoded.global * tensor2(g_global, b, 6)?)?.sum_all()?
            + (&decoded.local * tensor2(g_local, b, POSE_DIM)?)?.sum_all()?)?;
        let surrogate = (surrogate
            + (&decoded.refine * tensor2(g_refine, b, BETA_DIM)?)?.sum_all()?
            + (&decoded.joint * tensor2(g_joint, b, 3)?)?.sum_all()?)?;
        opt.backward_step(&(surrogate + commitment)?)?;
        self.sync_books_from_vars()?;
        Ok((mean, features))
    }

    fn reset_dead(&mut self, last: &[Vec<Vec<f64>>; 4], epoch: usize) -> Result<[usize; 4]> {
        let mut rng = seeded(derive_seed(self.seed, &[0x7671, 3, epoch as u64]));
        let mut counts = [0; 4];
        if self.config.shared_codebook {
            let mut book = self.books[0].clone();
            for (i, c) in book.usage_counts.iter_mut().enumerate() {
                *c = self.books.iter().map(|b| b.usage_counts[i]).sum();
            }
            let pool: Vec<Vec<f64>> = last.iter().flatten().cloned().collect();
            if let super::ResetStatus::Reset { entries } = book.reset_dead_codes(&pool, &mut rng)? {
                counts = [entries.len(); 4];
            }
            for b in self.books.iter_mut() {
                b.entries = book.entries.clone();
            }
        } else {
            for stage in Stage::ALL {
                let s = stage.index();
                if let super::ResetStatus::Reset { entries } = self.books[s].reset_dead_codes(&last[s], &mut rng)? {
                    counts[s] = entries.len();
                }
            }
        }
        self.sync_vars_from_books()?;
        Ok(counts)
    }

    fn coverage(&self) -> [f64; 4] {
        std::array::from_fn(|s| self.books[s].coverage())
    }

    /// Replaces usage counts with those of one encoding pass over `set`.
    pub fn recount_usage(&mut self, set: &SampleSet) -> Result<()> {
        let encoded = self.encode_all(set)?;
        for b in self.books.iter_mut() {
            b.reset_usage();
        }
        for e in &encoded {
            for stage in Stage::ALL {
                self.books[stage.index()].usage_counts[e.tokens.get(stage) as usize] += 1;
            }
        }
        Ok(())
    }

    /// Per-stage fraction of entries in use, from the stored usage counts.
    pub fn usage_coverage(&self) -> [f64; 4] {
        self.coverage()
    }

    pub fn optimizer(&self) -> Result<AdamW> {
        let params = ParamsAdamW {
            lr: self.config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(AdamW::new(self.store.trainable(), params)?)
    }

    /// One pass over `set` in a seeded order, then the dead-code reset.
    pub fn train_epoch(&mut self, set: &SampleSet, hand: &HandModelSpec, opt: &mut AdamW) -> Result<EpochStats> {
        if set.is_empty() {
            return Err(HaoiError::validation("no training frames"));
        }
        let epoch = self.epochs_trained;
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut seeded(derive_seed(self.seed, &[0x7671, 2, epoch as u64])));
        for b in self.books.iter_mut() {
            b.reset_usage();
        }
        let mut losses = LossBreakdown::default();
        let mut last = Default::default();
        let chunks: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
        for chunk in &chunks {
            let (l, f) = self.train_step(set, chunk, hand, opt)?;
            losses.accumulate(&l, chunk.len() as f64 / set.len() as f64);
            last = f;
        }
        let coverage = self.coverage();
        let reset = if self.config.reset_dead_codes {
            self.reset_dead(&last, epoch)?
        } else {
            [0; 4]
        };
        self.epochs_trained += 1;
        Ok(EpochStats {
            epoch,
            total: losses.total(&self.config.weights),
            losses,
            coverage,
            reset,
        })
    }

    /// Mean losses over `set` without updating anything.
    pub fn evaluate_losses(&self, set: &SampleSet, hand: &HandModelSpec) -> Result<LossBreakdown> {
        let mut mean = LossBreakdown::default();
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(INFERENCE_BATCH) {
            let batch = self.make_batch(set, chunk)?;
            let (q, c_o) = self.encode(&batch)?;
            let mut codes = Vec::new();
            let mut commitment = vec![0.0; chunk.len()];
            for stage in Stage::ALL {
                let rows = to_rows_f64(&q[stage.index()])?;
                let mut ids = Vec::new();
                for (k, r) in rows.iter().enumerate() {
                    let (i, d2) = self.books[stage.index()].nearest(r)?;
                    ids.push(i as u32);
                    commitment[k] += d2 * (1.0 + self.config.weights.beta_commit);
                }
                codes.push(self.lookup(stage, &ids)?);
            }
            let codes: [Tensor; 4] = codes.try_into().map_err(|_| HaoiError::Invariant("four stages".into()))?;
            let outputs = Self::outputs(&self.decode(&codes, &c_o)?)?;
            for (k, &i) in chunk.iter().enumerate() {
                let (mut l, _) = frame_loss(&outputs[k], &set.frames[i].target, hand, &self.config.weights);
                l.commitment = commitment[k];
                mean.accumulate(&l, 1.0 / set.len() as f64);
            }
        }
        Ok(mean)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| HaoiError::io(dir, e))?;
        self.store.save(&dir.join(WEIGHTS_FILE))?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION.into(),
            config: self.config.clone(),
            hand_model_hash: self.hand_model_hash.clone(),
            seed: self.seed,
            epochs_trained: self.epochs_trained,
            usage: self.books.iter().map(|b| b.usage_counts.clone()).collect(),
        };
        let path = dir.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| HaoiError::io(&path, e))
    }

    /// Loads a checkpoint directory and checks it against the hand model in use.
    pub fn load(dir: &Path, hand: &HandModelSpec) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HaoiError::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
        if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(HaoiError::validation(format!("{} is not a VQ-VAE checkpoint", path.display())));
        }
        if version != CHECKPOINT_VERSION {
            return Err(HaoiError::Version {
                expected: CHECKPOINT_VERSION.into(),
                found: version.into(),
            });
        }
        let meta: CheckpointMeta = serde_json::from_value(value)?;
        if meta.hand_model_hash != hand.hash() {
            return Err(HaoiError::validation(format!(
                "checkpoint was trained with hand model {}, current hand model is {}",
                meta.hand_model_hash,
                hand.hash()
            )));
        }
        let mut model = Self::new(&meta.config, hand, meta.seed)?;
        model.store.load(&dir.join(WEIGHTS_FILE))?;
        model.sync_books_from_vars()?;
        model.epochs_trained = meta.epochs_trained;
        if meta.usage.len() != 4 || meta.usage.iter().any(|u| u.len() != meta.config.codebook_size) {
            return Err(HaoiError::validation("checkpoint usage counts have the wrong shape"));
        }
        for (b, u) in model.books.iter_mut().zip(meta.usage) {
            b.usage_counts = u;
        }
        Ok(model)
    }
}

/// Batch-mean `‖sg[q] − q̂‖²` and `β‖q − sg[q̂]‖²` for rows of `q` and their entries `q̂`.
pub fn commitment_terms(q: &Tensor, q_hat: &Tensor, beta: f64) -> Result<(Tensor, Tensor)> {
    let codebook_term = (q.detach() - q_hat)?.sqr()?.sum(D::Minus1)?.mean(0)?;
    let encoder_term = ((q - q_hat.detach())?.sqr()?.sum(D::Minus1)?.mean(0)? * beta)?;
    Ok((codebook_term, encoder_term))
}

/// SHA-256 over the checkpoint's metadata and weight files.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for name in [META_FILE, WEIGHTS_FILE] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| HaoiError::io(&path, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn check_cloud(cloud: &[f32], n: usize) -> Result<()> {
    if cloud.len() != n * POINT_FEATURES {
        return Err(HaoiError::validation(format!(
            "point cloud has {} values, expected {} points",
            cloud.len(),
            n
        )));
    }
    Ok(())
}

/// World-frame grasp and joint state from canonical predictions.
pub fn to_world(out: &StageOutputs, transform: &CanonicalTransform) -> (GraspParams, Vec3) {
    let rb = transform.rotation();
    let beta = out.final_beta();
    let rot = rotation_to_axis_angle(&(rb * rodrigues(&beta.rot)));
    (
        GraspParams::new(rot, beta.pose, transform.apply(&beta.trans)),
        rb * out.joint,
    )
}

/// Learning rate for `epoch` under the configured cosine decay.
pub fn cosine_lr(config: &VqVaeConfig, epoch: usize) -> f64 {
    if config.epochs <= 1 {
        return config.learning_rate;
    }
    let progress = epoch as f64 / (config.epochs - 1) as f64;
    let ratio = config.final_lr_ratio + (1.0 - config.final_lr_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    config.learning_rate * ratio
}

/// Training driver: `config.epochs` epochs, then a usage recount over `set`.
pub fn train_vqvae(
    set: &SampleSet,
    hand: &HandModelSpec,
    config: &VqVaeConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(VqVae, Vec<EpochStats>)> {
    let mut model = VqVae::new(config, hand, seed)?;
    let mut opt = model.optimizer()?;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        opt.set_learning_rate(cosine_lr(config, epoch));
        let stats = model.train_epoch(set, hand, &mut opt)?;
        on_epoch(&stats);
        trace.push(stats);
    }
    model.recount_usage(set)?;
    Ok((model, trace))
}
