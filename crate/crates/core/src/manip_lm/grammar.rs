//! Frame-sequence grammar `⟨HO⟩ (⟨g⟩⟨l⟩⟨r⟩⟨j⟩)^t ⟨HO⟩` and the joint-only
//! layout `(⟨SG⟩⟨j⟩⟨EG⟩)^t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::vocab::{Vocabulary, EG, HO, SG};
use crate::discrete_repr::{Stage, TokenFrame};
use crate::error::{HaoiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    JointOnly,
    FullHaoi,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("expected <HO> delimiter at position {position}, found id {found}")]
    WrongDelimiter { position: usize, found: u32 },
    #[error("id {found} at position {position} is not a {expected} token")]
    WrongStage {
        position: usize,
        expected: Stage,
        found: u32,
    },
    #[error("truncated frame: sequence ends or closes at position {position}")]
    Truncated { position: usize },
    #[error("sequence closes at position {position} without any frame")]
    Empty { position: usize },
    #[error("unexpected id {found} after the closing delimiter at position {position}")]
    Trailing { position: usize, found: u32 },
}

impl GrammarError {
    pub fn position(&self) -> usize {
        match self {
            GrammarError::WrongDelimiter { position, .. }
            | GrammarError::WrongStage { position, .. }
            | GrammarError::Truncated { position }
            | GrammarError::Empty { position }
            | GrammarError::Trailing { position, .. } => *position,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    Strict,
    /// Drops a trailing incomplete frame and tolerates a missing closing delimiter.
    Repair,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub frames: Vec<TokenFrame>,
    /// Incomplete trailing frames discarded in repair mode.
    pub dropped: usize,
}

pub fn serialize_frames(frames: &[TokenFrame], vocab: &Vocabulary) -> Result<TokenSequence> {
    if frames.is_empty() {
        return Err(HaoiError::validation("cannot serialize an empty frame list"));
    }
    let mut ids = Vec::with_capacity(4 * frames.len() + 2);
    ids.push(HO);
    for f in frames {
        for stage in Stage::ALL {
            ids.push(vocab.motion_id(stage, f.get(stage))?);
        }
    }
    ids.push(HO);
    Ok(TokenSequence {
        ids,
        layout: Layout::FullHaoi,
    })
}

pub fn serialize_joint_only(joint_tokens: &[u32], vocab: &Vocabulary) -> Result<TokenSequence> {
    let mut ids = Vec::with_capacity(3 * joint_tokens.len());
    for j in joint_tokens {
        ids.extend([SG, vocab.motion_id(Stage::J, *j)?, EG]);
    }
    Ok(TokenSequence {
        ids,
        layout: Layout::JointOnly,
    })
}

/// Position inside a full-layout sequence, as seen by an incremental parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Open,
    /// Expecting the given stage of the current frame.
    Stage(Stage),
    /// Between frames: the next id is either a `g` token or the closing delimiter.
    Boundary,
    Closed,
}

impl Slot {
    pub fn after(self, id: u32, vocab: &Vocabulary) -> Slot {
        match self {
            Slot::Open => Slot::Stage(Stage::G),
            Slot::Stage(Stage::G) => Slot::Stage(Stage::L),
            Slot::Stage(Stage::L) => Slot::Stage(Stage::R),
            Slot::Stage(Stage::R) => Slot::Stage(Stage::J),
            Slot::Stage(Stage::J) => Slot::Boundary,
            Slot::Boundary if id == HO => Slot::Closed,
            Slot::Boundary => {
                debug_assert!(vocab.stage_range(Stage::G).contains(&id));
                Slot::Stage(Stage::L)
            }
            Slot::Closed => Slot::Closed,
        }
    }
}

pub fn parse_sequence(ids: &[u32], vocab: &Vocabulary, mode: ParseMode) -> Result<Parsed, GrammarError> {
    match parse_strict(ids, vocab) {
        Ok(frames) => Ok(Parsed { frames, dropped: 0 }),
        Err((GrammarError::Truncated { position }, frames))
            if mode == ParseMode::Repair && position == ids.len() && !frames.is_empty() =>
        {
            let partial = (ids.len() - 1) % 4 != 0;
            Ok(Parsed {
                frames,
                dropped: usize::from(partial),
            })
        }
        Err((e, _)) => Err(e),
    }
}

/// On failure also returns the complete frames read before the error.
fn parse_strict(ids: &[u32], vocab: &Vocabulary) -> Result<Vec<TokenFrame>, (GrammarError, Vec<TokenFrame>)> {
    let mut frames = Vec::new();
    match ids.first() {
        None => return Err((GrammarError::Truncated { position: 0 }, frames)),
        Some(&HO) => {}
        Some(&found) => return Err((GrammarError::WrongDelimiter { position: 0, found }, frames)),
    }
    let mut pos = 1;
    loop {
        let Some(&id) = ids.get(pos) else {
            return Err((GrammarError::Truncated { position: pos }, frames));
        };
        if id == HO {
            if frames.is_empty() {
                return Err((GrammarError::Empty { position: pos }, frames));
            }
            if let Some(&found) = ids.get(pos + 1) {
                return Err((GrammarError::Trailing { position: pos + 1, found }, frames));
            }
            return Ok(frames);
        }
        let mut tokens = [0u32; 4];
        for (k, stage) in Stage::ALL.into_iter().enumerate() {
            let p = pos + k;
            let Some(&id) = ids.get(p) else {
                return Err((GrammarError::Truncated { position: p }, frames));
            };
            if k > 0 && id == HO {
                return Err((GrammarError::Truncated { position: p }, frames));
            }
            match vocab.stage_of(id) {
                Some((s, index)) if s == stage => tokens[k] = index,
                _ if k == 0 && vocab.stage_of(id).is_none() => {
                    return Err((GrammarError::WrongDelimiter { position: p, found: id }, frames));
                }
                _ => {
                    return Err((
                        GrammarError::WrongStage {
                            position: p,
                            expected: stage,
                            found: id,
                        },
                        frames,
                    ))
                }
            }
        }
        frames.push(TokenFrame::from_stages(tokens));
        pos += 4;
    }
}

/// Joint tokens of a `(⟨SG⟩⟨j⟩⟨EG⟩)^t` block.
pub fn parse_joint_only(ids: &[u32], vocab: &Vocabulary) -> Result<Vec<u32>, GrammarError> {
    if ids.len() % 3 != 0 {
        return Err(GrammarError::Truncated { position: ids.len() });
    }
    let mut out = Vec::with_capacity(ids.len() / 3);
    for (k, chunk) in ids.chunks_exact(3).enumerate() {
        let p = 3 * k;
        if chunk[0] != SG {
            return Err(GrammarError::WrongDelimiter { position: p, found: chunk[0] });
        }
        match vocab.stage_of(chunk[1]) {
            Some((Stage::J, index)) => out.push(index),
            _ => {
                return Err(GrammarError::WrongStage {
                    position: p + 1,
                    expected: Stage::J,
                    found: chunk[1],
                })
            }
        }
        if chunk[2] != EG {
            return Err(GrammarError::WrongDelimiter { position: p + 2, found: chunk[2] });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manip_lm::vocab::{EOS, MASK};

    fn vocab() -> Vocabulary {
        Vocabulary::new(["open", "laptop"], 8).unwrap()
    }

    #[test]
    fn single_frame_layout() {
        let v = vocab();
        let s = serialize_frames(&[TokenFrame::new(0, 0, 0, 0)], &v).unwrap();
        let expected = vec![
            HO,
            v.motion_id(Stage::G, 0).unwrap(),
            v.motion_id(Stage::L, 0).unwrap(),
            v.motion_id(Stage::R, 0).unwrap(),
            v.motion_id(Stage::J, 0).unwrap(),
            HO,
        ];
        assert_eq!(s.ids, expected);
        assert_eq!(s.layout, Layout::FullHaoi);
    }

    #[test]
    fn length_is_four_t_plus_two() {
        let v = vocab();
        let frames = vec![TokenFrame::new(1, 2, 3, 4); 3];
        let s = serialize_frames(&frames, &v).unwrap();
        assert_eq!(s.ids.len(), 14);
        assert_eq!(parse_sequence(&s.ids, &v, ParseMode::Strict).unwrap().frames, frames);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let v = vocab();
        assert!(serialize_frames(&[TokenFrame::new(8, 0, 0, 0)], &v).is_err());
        assert!(serialize_frames(&[], &v).is_err());
    }

    #[test]
    fn missing_close_is_truncation_at_end() {
        let v = vocab();
        let mut ids = serialize_frames(&[TokenFrame::new(1, 2, 3, 4); 2], &v).unwrap().ids;
        ids.pop();
        let err = parse_sequence(&ids, &v, ParseMode::Strict).unwrap_err();
        assert_eq!(err, GrammarError::Truncated { position: ids.len() });
        let repaired = parse_sequence(&ids, &v, ParseMode::Repair).unwrap();
        assert_eq!(repaired.frames.len(), 2);
        assert_eq!(repaired.dropped, 0);
    }

    #[test]
    fn repair_drops_partial_frame() {
        let v = vocab();
        let mut ids = serialize_frames(&[TokenFrame::new(1, 2, 3, 4); 2], &v).unwrap().ids;
        ids.pop();
        ids.push(v.motion_id(Stage::G, 5).unwrap());
        ids.push(v.motion_id(Stage::L, 5).unwrap());
        assert!(matches!(
            parse_sequence(&ids, &v, ParseMode::Strict),
            Err(GrammarError::Truncated { position: 11 })
        ));
        let repaired = parse_sequence(&ids, &v, ParseMode::Repair).unwrap();
        assert_eq!(repaired.frames.len(), 2);
        assert_eq!(repaired.dropped, 1);
    }

    #[test]
    fn distinct_error_kinds() {
        let v = vocab();
        let g = v.motion_id(Stage::G, 0).unwrap();
        let l = v.motion_id(Stage::L, 0).unwrap();
        let r = v.motion_id(Stage::R, 0).unwrap();
        let j = v.motion_id(Stage::J, 0).unwrap();
        assert_eq!(
            parse_sequence(&[EOS, g, l, r, j, HO], &v, ParseMode::Strict),
            Err(GrammarError::WrongDelimiter { position: 0, found: EOS })
        );
        assert_eq!(
            parse_sequence(&[HO, g, r, l, j, HO], &v, ParseMode::Strict),
            Err(GrammarError::WrongStage {
                position: 2,
                expected: Stage::L,
                found: r
            })
        );
        assert_eq!(
            parse_sequence(&[HO, g, l, HO], &v, ParseMode::Strict),
            Err(GrammarError::Truncated { position: 3 })
        );
        assert_eq!(parse_sequence(&[HO, HO], &v, ParseMode::Strict), Err(GrammarError::Empty { position: 1 }));
        assert_eq!(
            parse_sequence(&[HO, g, l, r, j, HO, EOS], &v, ParseMode::Strict),
            Err(GrammarError::Trailing { position: 6, found: EOS })
        );
        assert_eq!(
            parse_sequence(&[HO, MASK, l, r, j, HO], &v, ParseMode::Strict),
            Err(GrammarError::WrongDelimiter { position: 1, found: MASK })
        );
    }

    #[test]
    fn joint_only_round_trip() {
        let v = vocab();
        let s = serialize_joint_only(&[3, 1, 7], &v).unwrap();
        assert_eq!(s.ids.len(), 9);
        assert_eq!(s.layout, Layout::JointOnly);
        assert_eq!(parse_joint_only(&s.ids, &v).unwrap(), vec![3, 1, 7]);
        assert!(parse_joint_only(&s.ids[..8], &v).is_err());
    }
}
