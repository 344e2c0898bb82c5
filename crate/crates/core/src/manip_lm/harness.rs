//! Dataset-to-example conversion and the three task runners.

use std::collections::HashMap;

use super::generate::generate;
use super::model::{SamplingConfig, TransformerLm};
use super::prompt::{make_example, make_prompt, prediction_prefix, Example, PromptInputs, Task};
use super::vocab::Vocabulary;
use crate::articulated_object::{ArticulatedObject, CanonicalTransform, JointState};
use crate::discrete_repr::{prepare_sequences, to_world, StageOutputs, TokenFrame, VqVae};
use crate::error::{HaoiError, Result};
use crate::hand_model::{GraspParams, HandModelSpec, Vec3};
use crate::rng::{derive_seed, seeded, string_key};
use crate::synth_data::{HAOIFrame, HAOISequence, Provenance};

/// A dataset sequence in token form.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub id: String,
    pub text: Vec<u32>,
    pub frames: Vec<TokenFrame>,
    pub joint_tokens: Vec<u32>,
    pub condition: Vec<f64>,
    pub transform: CanonicalTransform,
}

impl EncodedSequence {
    pub fn inputs(&self, mask_fraction: f64) -> PromptInputs<'_> {
        PromptInputs {
            text: &self.text,
            joint_tokens: &self.joint_tokens,
            frames: Some(&self.frames),
            mask_fraction,
        }
    }
}

pub fn encode_sequences(
    sequences: &[HAOISequence],
    objects: &HashMap<String, ArticulatedObject>,
    vq: &VqVae,
    vocab: &Vocabulary,
) -> Result<Vec<EncodedSequence>> {
    if vocab.codebook_size() != vq.codebook_size() {
        return Err(HaoiError::Version {
            expected: format!("codebook size {}", vocab.codebook_size()),
            found: format!("codebook size {}", vq.codebook_size()),
        });
    }
    let set = prepare_sequences(sequences, objects, vq.config.n_points)?;
    let encoded = vq.encode_all(&set)?;
    sequences
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let range = set.frames_of(i);
            let frames: Vec<TokenFrame> = encoded[range].iter().map(|e| e.tokens).collect();
            Ok(EncodedSequence {
                id: seq.id.clone(),
                text: vocab.encode_text(&seq.caption)?,
                joint_tokens: frames.iter().map(|f| f.j).collect(),
                frames,
                condition: vq.object_condition(&set.contexts[i])?,
                transform: set.contexts[i].transform,
            })
        })
        .collect()
}

/// Tasks trained in each stage: alignment on generation pairs, then all three tasks.
pub fn stage_tasks(stage: u8) -> &'static [Task] {
    if stage == 1 {
        &[Task::Generation]
    } else {
        &Task::ALL
    }
}

pub fn build_examples(encoded: &[EncodedSequence], tasks: &[Task], vocab: &Vocabulary, mask_fraction: f64) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(encoded.len() * tasks.len());
    for e in encoded {
        for &task in tasks {
            if task == Task::Prediction && prediction_prefix(e.frames.len()) >= e.frames.len() {
                continue;
            }
            out.push(make_example(task, &e.inputs(mask_fraction), vocab)?);
        }
    }
    Ok(out)
}

/// Canonical-space grasp parameters and joint estimates for decoded token frames.
pub fn decode_to_grasps(frames: &[TokenFrame], vq: &VqVae, condition: &[f64]) -> Result<(Vec<GraspParams>, Vec<Vec3>)> {
    let outputs = vq.decode_frames(frames, condition)?;
    Ok(outputs.iter().map(|o| (o.final_beta(), o.joint)).unzip())
}

/// Builds a generated sequence in world space from decoded frames.
pub fn sequence_from_outputs(
    source: &HAOISequence,
    obj: &ArticulatedObject,
    hand: &HandModelSpec,
    outputs: &[StageOutputs],
    transform: &CanonicalTransform,
    provenance: Provenance,
    id: String,
) -> Result<HAOISequence> {
    let (lo, hi) = obj.joint.limits;
    let frames = outputs
        .iter()
        .map(|o| {
            let (beta, joint) = to_world(o, transform);
            let s = obj.joint.axis.dot(&joint).clamp(lo, hi);
            let rot = crate::hand_model::rodrigues(&beta.rot);
            let contact = rot * hand.posed_vertex(hand.anchor_vertex, &beta.pose) + beta.trans;
            HAOIFrame {
                beta,
                joint_state: JointState::along(&obj.joint, s),
                contact_point: contact,
                canonical_t: *transform,
            }
        })
        .collect();
    let seq = HAOISequence {
        id,
        object: source.object.clone(),
        frames,
        caption: source.caption.clone(),
        task_meta: source.task_meta.clone(),
        provenance: Some(provenance),
    };
    seq.validate()?;
    Ok(seq)
}

pub struct TaskRun<'a> {
    pub lm: &'a TransformerLm,
    pub vq: &'a VqVae,
    pub hand: &'a HandModelSpec,
    pub sampling: &'a SamplingConfig,
    pub samples_per_sequence: usize,
    pub seed: u64,
    /// Identifier stamped into each output's provenance.
    pub checkpoint: String,
}

/// Token frames produced for one encoded sequence.
pub fn run_one(run: &TaskRun, task: Task, e: &EncodedSequence, sample: usize) -> Result<Vec<TokenFrame>> {
    let vocab = &run.lm.vocab;
    let mask_fraction = run.lm.config.mask_fraction;
    let inputs = e.inputs(mask_fraction);
    let prompt = make_prompt(task, &inputs, vocab)?;
    let forced = match task {
        Task::Interpolation => make_example(task, &inputs, vocab)?.forced,
        _ => None,
    };
    let mut rng = seeded(derive_seed(run.seed, &[task as u64, sample as u64, string_key(&e.id)]));
    let mut source = run.lm;
    let generated = generate(&mut source, &prompt, vocab, run.sampling, forced.as_deref(), &mut rng)?;
    Ok(match task {
        Task::Prediction => {
            let mut frames = e.frames[..prediction_prefix(e.frames.len())].to_vec();
            frames.extend(generated.frames);
            frames
        }
        _ => generated.frames,
    })
}

/// Runs `task` on every sequence, `samples_per_sequence` times each.
pub fn run_task(
    run: &TaskRun,
    task: Task,
    sequences: &[HAOISequence],
    objects: &HashMap<String, ArticulatedObject>,
) -> Result<Vec<HAOISequence>> {
    let encoded = encode_sequences(sequences, objects, run.vq, &run.lm.vocab)?;
    let mut out = Vec::with_capacity(sequences.len() * run.samples_per_sequence);
    for (seq, e) in sequences.iter().zip(&encoded) {
        let obj = &objects[&seq.object.id];
        for sample in 0..run.samples_per_sequence {
            let frames = run_one(run, task, e, sample)?;
            let outputs = run.vq.decode_frames(&frames, &e.condition)?;
            let provenance = Provenance {
                task: task.name().into(),
                source_sequence: seq.id.clone(),
                sample_index: sample,
                checkpoint: run.checkpoint.clone(),
            };
            let id = format!("{}-{}-s{sample}", seq.id, task.name());
            out.push(sequence_from_outputs(seq, obj, run.hand, &outputs, &e.transform, provenance, id)?);
        }
    }
    Ok(out)
}
