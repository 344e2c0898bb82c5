//! Grammar-constrained autoregressive decoding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grammar::{parse_sequence, ParseMode, Slot};
use super::model::{SamplingConfig, TransformerLm};
use super::vocab::{Vocabulary, EOS, HO};
use crate::discrete_repr::{Stage, TokenFrame};
use crate::error::{HaoiError, Result};

/// Anything that scores the next id given the ids so far.
pub trait LogitSource {
    fn vocab_size(&self) -> usize;
    fn next_logits(&mut self, context: &[u32]) -> Result<Vec<f64>>;
    /// Longest context accepted, if bounded.
    fn context_limit(&self) -> Option<usize> {
        None
    }
}

impl LogitSource for &TransformerLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_logits(&mut self, context: &[u32]) -> Result<Vec<f64>> {
        TransformerLm::next_logits(self, context)
    }

    fn context_limit(&self) -> Option<usize> {
        Some(self.config.context)
    }
}

/// Ids legal at a grammar slot, in increasing order.
///
/// The sequence may close once it holds `min_frames` frames and must close at `max_frames`.
pub fn legal_ids(slot: Slot, frames: usize, min_frames: usize, max_frames: usize, vocab: &Vocabulary) -> Vec<u32> {
    match slot {
        Slot::Open => vec![HO],
        Slot::Stage(stage) => vocab.stage_range(stage).collect(),
        Slot::Boundary if frames >= max_frames => vec![HO],
        Slot::Boundary if frames < min_frames => vocab.stage_range(Stage::G).collect(),
        Slot::Boundary => {
            let mut ids = vec![HO];
            ids.extend(vocab.stage_range(Stage::G));
            ids
        }
        Slot::Closed => vec![EOS],
    }
}

/// Picks one id among `legal`: argmax (lowest id on ties) at temperature 0,
/// otherwise nucleus sampling from the tempered softmax.
pub fn choose(logits: &[f64], legal: &[u32], sampling: &SamplingConfig, rng: &mut ChaCha8Rng) -> Result<u32> {
    if legal.is_empty() {
        return Err(HaoiError::Invariant("no legal token after masking".into()));
    }
    let score = |id: u32| logits[id as usize];
    if let Some(id) = legal.iter().find(|&&id| !score(id).is_finite() && score(id) != f64::NEG_INFINITY) {
        return Err(HaoiError::NonFinite {
            term: "logits".into(),
            detail: format!("id {id}"),
        });
    }
    if sampling.temperature == 0.0 {
        let mut best = legal[0];
        for &id in &legal[1..] {
            if score(id) > score(best) {
                best = id;
            }
        }
        return Ok(best);
    }
    let max = legal.iter().map(|&id| score(id)).fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(u32, f64)> = legal
        .iter()
        .map(|&id| (id, ((score(id) - max) / sampling.temperature).exp()))
        .collect();
    let z: f64 = probs.iter().map(|p| p.1).sum();
    probs.iter_mut().for_each(|p| p.1 /= z);
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept = 0;
    let mut mass = 0.0;
    for p in &probs {
        kept += 1;
        mass += p.1;
        if mass >= sampling.top_p {
            break;
        }
    }
    let u = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    for p in &probs[..kept] {
        acc += p.1;
        if u < acc {
            return Ok(p.0);
        }
    }
    Ok(probs[kept - 1].0)
}

/// Generated target ids (ending in `⟨EOS⟩`) and the frames they encode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub ids: Vec<u32>,
    pub frames: Vec<TokenFrame>,
}

/// Continues `prompt` with a full-layout frame sequence.
///
/// `forced` fixes ids at given target positions; it must describe a complete,
/// grammar-legal target (interpolation prompts).
pub fn generate(
    source: &mut impl LogitSource,
    prompt: &[u32],
    vocab: &Vocabulary,
    sampling: &SamplingConfig,
    forced: Option<&[Option<u32>]>,
    rng: &mut ChaCha8Rng,
) -> Result<Generated> {
    if source.vocab_size() != vocab.len() {
        return Err(HaoiError::validation(format!(
            "logit source has {} ids, vocabulary has {}",
            source.vocab_size(),
            vocab.len()
        )));
    }
    let max_frames = match forced {
        Some(f) => (f.len().saturating_sub(3)) / 4,
        None => sampling.max_frames,
    };
    let min_frames = if forced.is_some() { max_frames } else { 1 };
    let longest = prompt.len() + 4 * max_frames + 2;
    if let Some(limit) = source.context_limit() {
        if longest > limit {
            return Err(HaoiError::ContextOverflow {
                needed: longest,
                context: limit,
            });
        }
    }
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    let mut slot = Slot::Open;
    let mut frames = 0usize;
    loop {
        let legal = legal_ids(slot, frames, min_frames, max_frames, vocab);
        let fixed = forced.and_then(|f| f.get(out.len()).copied().flatten());
        let id = match fixed {
            Some(id) => {
                if !legal.contains(&id) {
                    return Err(HaoiError::validation(format!(
                        "forced id {id} is not legal at target position {}",
                        out.len()
                    )));
                }
                id
            }
            None => {
                let logits = source.next_logits(&context)?;
                if logits.len() != vocab.len() {
                    return Err(HaoiError::Invariant("logit row has the wrong width".into()));
                }
                choose(&logits, &legal, sampling, rng)?
            }
        };
        out.push(id);
        context.push(id);
        if slot == Slot::Closed {
            break;
        }
        if slot == Slot::Stage(Stage::J) {
            frames += 1;
        }
        slot = slot.after(id, vocab);
    }
    let body = &out[..out.len() - 1];
    let parsed = parse_sequence(body, vocab, ParseMode::Strict)
        .map_err(|e| HaoiError::Invariant(format!("constrained decoding produced an invalid sequence: {e}")))?;
    Ok(Generated {
        ids: out,
        frames: parsed.frames,
    })
}

/// Standard-normal logits, for exercising the decoder without a model.
pub struct RandomLogits {
    pub size: usize,
    pub rng: ChaCha8Rng,
}

impl LogitSource for RandomLogits {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_logits(&mut self, _context: &[u32]) -> Result<Vec<f64>> {
        Ok((0..self.size)
            .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut self.rng) * 3.0)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn greedy_ties_go_to_lowest_id() {
        let logits = vec![0.0, 1.0, 1.0, 0.5];
        let s = SamplingConfig::default();
        assert_eq!(choose(&logits, &[0, 1, 2, 3], &s, &mut seeded(0)).unwrap(), 1);
        assert_eq!(choose(&logits, &[3, 2], &s, &mut seeded(0)).unwrap(), 2);
        assert!(matches!(choose(&logits, &[], &s, &mut seeded(0)), Err(HaoiError::Invariant(_))));
    }

    #[test]
    fn nucleus_keeps_top_mass() {
        let logits = vec![10.0, 0.0, 0.0, 0.0];
        let s = SamplingConfig {
            temperature: 1.0,
            top_p: 0.5,
            ..SamplingConfig::default()
        };
        let mut rng = seeded(1);
        for _ in 0..100 {
            assert_eq!(choose(&logits, &[0, 1, 2, 3], &s, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn forced_frames_are_kept() {
        let vocab = Vocabulary::new(["open"], 4).unwrap();
        let frames = vec![TokenFrame::new(1, 2, 3, 0), TokenFrame::new(0, 0, 0, 0), TokenFrame::new(3, 3, 3, 3)];
        let full = super::super::grammar::serialize_frames(&frames, &vocab).unwrap().ids;
        let mut forced: Vec<Option<u32>> = full.iter().map(|&id| Some(id)).collect();
        for f in &mut forced[5..9] {
            *f = None;
        }
        forced.push(Some(EOS));
        let mut src = RandomLogits {
            size: vocab.len(),
            rng: seeded(3),
        };
        let g = generate(&mut src, &[1], &vocab, &SamplingConfig::default(), Some(&forced), &mut seeded(4)).unwrap();
        assert_eq!(g.frames.len(), 3);
        assert_eq!(g.frames[0], frames[0]);
        assert_eq!(g.frames[2], frames[2]);
    }
}
