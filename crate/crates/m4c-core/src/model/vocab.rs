use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BEGIN_TOKEN: &str = "<begin>";
pub const END_TOKEN: &str = "<end>";
pub const BEGIN_INDEX: usize = 0;
pub const END_INDEX: usize = 1;

/// The fixed answer vocabulary: the special tokens at indices 0 and 1,
/// followed by frequent answer words. Index order is the scoring layout of
/// the vocabulary head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AnswerVocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl AnswerVocab {
    /// Specials only; the smallest valid vocabulary.
    pub fn specials_only() -> Self {
        Self::from_regular_words(Vec::new())
    }

    /// Build from the non-special word list (specials are prepended).
    pub fn from_regular_words(words: Vec<String>) -> Self {
        let mut all = Vec::with_capacity(words.len() + 2);
        all.push(BEGIN_TOKEN.to_string());
        all.push(END_TOKEN.to_string());
        all.extend(words);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        AnswerVocab { words: all, index }
    }

    /// Top-`cap` vocabulary (cap includes the two specials) from word counts.
    /// Words below `min_count` never qualify; ties break lexicographically.
    pub fn from_word_counts(counts: &HashMap<String, usize>, cap: usize, min_count: usize) -> Self {
        let mut ranked: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(w, &c)| c >= min_count.max(1) && !is_special(w))
            .map(|(w, &c)| (w, c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = cap.saturating_sub(2);
        let words = ranked
            .into_iter()
            .take(keep)
            .map(|(w, _)| w.clone())
            .collect();
        Self::from_regular_words(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

pub fn is_special(word: &str) -> bool {
    word == BEGIN_TOKEN || word == END_TOKEN
}

impl From<AnswerVocab> for Vec<String> {
    fn from(v: AnswerVocab) -> Self {
        v.words
    }
}

impl TryFrom<Vec<String>> for AnswerVocab {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[0] != BEGIN_TOKEN || words[1] != END_TOKEN {
            return Err(Error::Validation(
                "answer vocabulary must start with the special tokens".into(),
            ));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(AnswerVocab { words, index })
    }
}
