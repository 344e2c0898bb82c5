//! Prompt and target layouts for the three tasks.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grammar::{serialize_frames, serialize_joint_only};
use super::vocab::{Vocabulary, BOS, EOS, HO, MASK};
use crate::discrete_repr::TokenFrame;
use crate::error::{HaoiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Generation,
    Prediction,
    Interpolation,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Generation, Task::Prediction, Task::Interpolation];

    pub fn name(self) -> &'static str {
        match self {
            Task::Generation => "generation",
            Task::Prediction => "prediction",
            Task::Interpolation => "interpolation",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = HaoiError;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| HaoiError::validation(format!("unknown task '{s}' (expected generation, prediction or interpolation)")))
    }
}

/// Number of observed frames in a prediction prompt: `⌈0.2·t⌉`, at least one.
pub fn prediction_prefix(t: usize) -> usize {
    (t as f64 * 0.2).ceil().max(1.0) as usize
}

/// Contiguous middle span of masked frames covering 40–50% of `t`.
///
/// `fraction` picks the length within that band; the span is centered.
pub fn interpolation_span(t: usize, fraction: f64) -> Result<Range<usize>> {
    if t < 2 {
        return Err(HaoiError::validation("interpolation needs at least two frames"));
    }
    let lo = (0.4 * t as f64).ceil() as usize;
    let hi = ((0.5 * t as f64).floor() as usize).max(lo);
    let m = ((fraction * t as f64).round() as usize).clamp(lo, hi).min(t - 1).max(1);
    let start = (t - m) / 2;
    Ok(start..start + m)
}

/// A prompt and the target it should be continued with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub task: Task,
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
    /// Target ids fixed by the prompt (interpolation), one entry per target position.
    pub forced: Option<Vec<Option<u32>>>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.prompt.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompt.is_empty() && self.target.is_empty()
    }
}

/// Task inputs for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub text: &'a [u32],
    /// Per-frame joint tokens of the object trajectory.
    pub joint_tokens: &'a [u32],
    pub frames: Option<&'a [TokenFrame]>,
    pub mask_fraction: f64,
}

/// Prompt ids: `⟨BOS⟩ text` followed by the task's conditioning block.
pub fn make_prompt(task: Task, inputs: &PromptInputs, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let mut ids = vec![BOS];
    ids.extend_from_slice(inputs.text);
    match task {
        Task::Generation => {
            if inputs.joint_tokens.is_empty() {
                return Err(HaoiError::validation("generation prompt needs joint tokens"));
            }
            ids.extend(serialize_joint_only(inputs.joint_tokens, vocab)?.ids);
        }
        Task::Prediction => {
            let frames = partial_frames(task, inputs)?;
            ids.extend(serialize_frames(&frames[..prediction_prefix(frames.len())], vocab)?.ids);
        }
        Task::Interpolation => {
            let frames = partial_frames(task, inputs)?;
            let span = interpolation_span(frames.len(), inputs.mask_fraction)?;
            let full = serialize_frames(frames, vocab)?.ids;
            for (k, id) in full.into_iter().enumerate() {
                let frame = (k >= 1).then(|| (k - 1) / 4);
                let masked = frame.is_some_and(|f| span.contains(&f));
                ids.push(if masked { MASK } else { id });
            }
        }
    }
    Ok(ids)
}

fn partial_frames<'a>(task: Task, inputs: &PromptInputs<'a>) -> Result<&'a [TokenFrame]> {
    match inputs.frames {
        Some(f) if !f.is_empty() => Ok(f),
        _ => Err(HaoiError::validation(format!("{task} prompt needs partial frames"))),
    }
}

/// Full training example: prompt plus the ground-truth continuation.
pub fn make_example(task: Task, inputs: &PromptInputs, vocab: &Vocabulary) -> Result<Example> {
    let prompt = make_prompt(task, inputs, vocab)?;
    let frames = match (task, inputs.frames) {
        (_, Some(f)) if !f.is_empty() => f,
        _ => return Err(HaoiError::validation(format!("{task} example needs ground-truth frames"))),
    };
    let (target_frames, forced) = match task {
        Task::Generation => (frames, None),
        Task::Prediction => {
            let p = prediction_prefix(frames.len());
            if p >= frames.len() {
                return Err(HaoiError::validation("prediction needs at least one frame after the prefix"));
            }
            (&frames[p..], None)
        }
        Task::Interpolation => {
            let span = interpolation_span(frames.len(), inputs.mask_fraction)?;
            (frames, Some(interpolation_forced(frames, &span, vocab)?))
        }
    };
    let mut target = serialize_frames(target_frames, vocab)?.ids;
    target.push(EOS);
    Ok(Example {
        task,
        prompt,
        target,
        forced,
    })
}

/// Forced target ids for an interpolation prompt: everything but the masked frames.
pub fn interpolation_forced(frames: &[TokenFrame], span: &Range<usize>, vocab: &Vocabulary) -> Result<Vec<Option<u32>>> {
    let full = serialize_frames(frames, vocab)?.ids;
    let mut forced: Vec<Option<u32>> = full
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let in_span = k >= 1 && k <= 4 * frames.len() && span.contains(&((k - 1) / 4));
            (!in_span).then_some(*id)
        })
        .collect();
    forced.push(Some(EOS));
    Ok(forced)
}

/// Forced ids when only the frame count and unmasked frames are known from a prompt.
pub fn forced_from_prompt(prompt: &[u32]) -> Option<Vec<Option<u32>>> {
    let open = prompt.iter().position(|&id| id == HO)?;
    let body = &prompt[open..];
    if body.len() < 6 || body.last() != Some(&HO) || (body.len() - 2) % 4 != 0 {
        return None;
    }
    let mut forced: Vec<Option<u32>> = body.iter().map(|&id| (id != MASK).then_some(id)).collect();
    if forced.iter().all(|f| f.is_some()) {
        return None;
    }
    forced.push(Some(EOS));
    Some(forced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete_repr::Stage;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["open", "the", "laptop"], 16).unwrap()
    }

    fn frames(t: usize) -> Vec<TokenFrame> {
        (0..t as u32).map(|i| TokenFrame::new(i % 16, (i + 1) % 16, (i + 2) % 16, (i + 3) % 16)).collect()
    }

    fn inputs<'a>(text: &'a [u32], joints: &'a [u32], f: &'a [TokenFrame]) -> PromptInputs<'a> {
        PromptInputs {
            text,
            joint_tokens: joints,
            frames: Some(f),
            mask_fraction: 0.4,
        }
    }

    #[test]
    fn prediction_prompt_has_prefix_frames() {
        let v = vocab();
        let f = frames(10);
        let text = v.encode_text("open the laptop").unwrap();
        let j: Vec<u32> = f.iter().map(|x| x.j).collect();
        let p = make_prompt(Task::Prediction, &inputs(&text, &j, &f), &v).unwrap();
        assert_eq!(p.len(), 1 + 3 + 4 * 2 + 2);
        let ex = make_example(Task::Prediction, &inputs(&text, &j, &f), &v).unwrap();
        assert_eq!(ex.target.len(), 4 * 8 + 3);
    }

    #[test]
    fn interpolation_masks_middle() {
        let v = vocab();
        let f = frames(10);
        let text = v.encode_text("open the laptop").unwrap();
        let j: Vec<u32> = f.iter().map(|x| x.j).collect();
        let p = make_prompt(Task::Interpolation, &inputs(&text, &j, &f), &v).unwrap();
        assert_eq!(p.iter().filter(|&&id| id == MASK).count(), 16);
        assert_eq!(interpolation_span(10, 0.4).unwrap(), 3..7);
        let ex = make_example(Task::Interpolation, &inputs(&text, &j, &f), &v).unwrap();
        assert_eq!(forced_from_prompt(&ex.prompt).unwrap(), ex.forced.clone().unwrap());
    }

    #[test]
    fn generation_prompt_is_joint_only() {
        let v = vocab();
        let f = frames(5);
        let text = v.encode_text("open the laptop").unwrap();
        let j: Vec<u32> = f.iter().map(|x| x.j).collect();
        let p = make_prompt(Task::Generation, &inputs(&text, &j, &f), &v).unwrap();
        for stage in Stage::HAND {
            assert!(p.iter().all(|id| !v.stage_range(stage).contains(id)));
        }
        assert!(make_prompt(Task::Prediction, &PromptInputs { frames: None, ..inputs(&text, &j, &f) }, &v).is_err());
    }

    #[test]
    fn span_stays_in_band() {
        for t in 8..=64 {
            for fr in [0.0, 0.4, 0.45, 0.5, 1.0] {
                let s = interpolation_span(t, fr).unwrap();
                let m = s.len() as f64 / t as f64;
                assert!((0.4..=0.5).contains(&m), "t={t} fraction {m}");
                assert_eq!(s.start, (t - s.len()) / 2);
            }
        }
    }
}
