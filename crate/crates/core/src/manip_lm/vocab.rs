//! Token vocabulary: special markers, caption words, and four motion-token ranges.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::discrete_repr::Stage;
use crate::error::{HaoiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Pad,
    Bos,
    Eos,
    /// Frame-sequence delimiter `⟨HO⟩`.
    Ho,
    /// Start of a joint-only slot `⟨SG⟩`.
    Sg,
    /// End of a joint-only slot `⟨EG⟩`.
    Eg,
    Mask,
}

impl Special {
    pub const ALL: [Special; 7] = [
        Special::Pad,
        Special::Bos,
        Special::Eos,
        Special::Ho,
        Special::Sg,
        Special::Eg,
        Special::Mask,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Special::Pad => "<PAD>",
            Special::Bos => "<BOS>",
            Special::Eos => "<EOS>",
            Special::Ho => "<HO>",
            Special::Sg => "<SG>",
            Special::Eg => "<EG>",
            Special::Mask => "<MASK>",
        }
    }
}

pub const PAD: u32 = Special::Pad as u32;
pub const BOS: u32 = Special::Bos as u32;
pub const EOS: u32 = Special::Eos as u32;
pub const HO: u32 = Special::Ho as u32;
pub const SG: u32 = Special::Sg as u32;
pub const EG: u32 = Special::Eg as u32;
pub const MASK: u32 = Special::Mask as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token<'a> {
    Special(Special),
    Word(&'a str),
    Motion(Stage, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    words: Vec<String>,
    codebook_size: usize,
    word_ids: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyData {
    words: Vec<String>,
    codebook_size: usize,
}

impl TryFrom<VocabularyData> for Vocabulary {
    type Error = HaoiError;

    fn try_from(d: VocabularyData) -> Result<Self> {
        let v = Vocabulary::new(d.words.clone(), d.codebook_size)?;
        if v.words != d.words {
            return Err(HaoiError::validation("stored vocabulary words are not sorted and unique"));
        }
        Ok(v)
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        Self {
            words: v.words,
            codebook_size: v.codebook_size,
        }
    }
}

impl Vocabulary {
    /// Words are deduplicated and sorted so the id assignment is order independent.
    pub fn new<I, S>(words: I, codebook_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if codebook_size == 0 {
            return Err(HaoiError::validation("codebook size must be positive"));
        }
        let mut words: Vec<String> = words.into_iter().map(Into::into).collect();
        words.sort();
        words.dedup();
        if let Some(w) = words.iter().find(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
            return Err(HaoiError::validation(format!("invalid vocabulary word {w:?}")));
        }
        let base = Special::ALL.len() as u32;
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), base + i as u32))
            .collect();
        Ok(Self {
            words,
            codebook_size,
            word_ids,
        })
    }

    /// Builds the word list from a caption corpus.
    pub fn from_captions<'a>(captions: impl IntoIterator<Item = &'a str>, codebook_size: usize) -> Result<Self> {
        let words: Vec<String> = captions.into_iter().flat_map(tokenize_caption).collect();
        Self::new(words, codebook_size)
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    fn motion_base(&self) -> u32 {
        (Special::ALL.len() + self.words.len()) as u32
    }

    pub fn len(&self) -> usize {
        Special::ALL.len() + self.words.len() + 4 * self.codebook_size
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Contiguous id range of a stage's motion tokens.
    pub fn stage_range(&self, stage: Stage) -> std::ops::Range<u32> {
        let start = self.motion_base() + (stage.index() * self.codebook_size) as u32;
        start..start + self.codebook_size as u32
    }

    pub fn motion_id(&self, stage: Stage, index: u32) -> Result<u32> {
        if index as usize >= self.codebook_size {
            return Err(HaoiError::validation(format!(
                "{stage} token {index} out of range for codebook size {}",
                self.codebook_size
            )));
        }
        Ok(self.stage_range(stage).start + index)
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.word_ids.get(word).copied()
    }

    pub fn decode(&self, id: u32) -> Option<Token<'_>> {
        let n_special = Special::ALL.len() as u32;
        if id < n_special {
            return Some(Token::Special(Special::ALL[id as usize]));
        }
        let base = self.motion_base();
        if id < base {
            return Some(Token::Word(&self.words[(id - n_special) as usize]));
        }
        let offset = (id - base) as usize;
        if offset >= 4 * self.codebook_size {
            return None;
        }
        let stage = Stage::ALL[offset / self.codebook_size];
        Some(Token::Motion(stage, (offset % self.codebook_size) as u32))
    }

    /// Stage of a motion-token id, if it is one.
    pub fn stage_of(&self, id: u32) -> Option<(Stage, u32)> {
        match self.decode(id)? {
            Token::Motion(stage, index) => Some((stage, index)),
            _ => None,
        }
    }

    pub fn symbol(&self, id: u32) -> String {
        match self.decode(id) {
            Some(Token::Special(s)) => s.symbol().to_string(),
            Some(Token::Word(w)) => w.to_string(),
            Some(Token::Motion(stage, i)) => format!("<{stage}{i}>"),
            None => format!("<?{id}>"),
        }
    }

    pub fn encode_text(&self, caption: &str) -> Result<Vec<u32>> {
        tokenize_caption(caption)
            .map(|w| {
                self.word_id(&w)
                    .ok_or_else(|| HaoiError::validation(format!("word {w:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode_text(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for id in ids {
            if let Some(Token::Word(w)) = self.decode(*id) {
                let punct = w.chars().all(|c| c.is_ascii_punctuation());
                if !out.is_empty() && !punct {
                    out.push(' ');
                }
                out.push_str(w);
            }
        }
        out
    }
}

/// Lowercased words, with punctuation characters split into their own tokens.
pub fn tokenize_caption(caption: &str) -> impl Iterator<Item = String> + '_ {
    caption.split_whitespace().flat_map(|chunk| {
        let mut parts = Vec::new();
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() && c != '-' && c != '\'' {
                if !word.is_empty() {
                    parts.push(std::mem::take(&mut word));
                }
                parts.push(c.to_string());
            } else {
                word.extend(c.to_lowercase());
            }
        }
        if !word.is_empty() {
            parts.push(word);
        }
        parts
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn ids_form_a_bijection() {
        let v = Vocabulary::new(["open", "the", "laptop", "."], 5).unwrap();
        assert_eq!(v.len(), 7 + 4 + 20);
        let mut seen = HashSet::new();
        for id in 0..v.len() as u32 {
            let sym = v.symbol(id);
            assert!(seen.insert(sym.clone()), "duplicate symbol {sym}");
            match v.decode(id).unwrap() {
                Token::Special(s) => assert_eq!(s.id(), id),
                Token::Word(w) => assert_eq!(v.word_id(w), Some(id)),
                Token::Motion(stage, i) => assert_eq!(v.motion_id(stage, i).unwrap(), id),
            }
        }
        assert!(v.decode(v.len() as u32).is_none());
    }

    #[test]
    fn stage_ranges_are_disjoint_and_contiguous() {
        let v = Vocabulary::new(["a"], 7).unwrap();
        let ranges: Vec<_> = Stage::ALL.iter().map(|s| v.stage_range(*s)).collect();
        for w in ranges.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        assert_eq!(ranges[3].end as usize, v.len());
    }

    #[test]
    fn caption_round_trip() {
        let caption = "Grasp the top of the laptop, then open it.";
        let v = Vocabulary::from_captions([caption], 4).unwrap();
        let ids = v.encode_text(caption).unwrap();
        assert_eq!(v.decode_text(&ids), "grasp the top of the laptop, then open it.");
        assert!(v.encode_text("close it").is_err());
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.encode_text(caption).unwrap(), ids);
    }
}
