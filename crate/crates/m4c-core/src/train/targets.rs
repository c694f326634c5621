//! Answer tokenization and per-step multi-label target construction.

use crate::model::{AnswerVocab, ModelConfig, StepInput, END_INDEX};

/// Lowercase and split on whitespace runs.
pub fn tokenize_answer(answer: &str) -> Vec<String> {
    answer
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Supervision for one example: a binary target row of length V+N per
/// supervised step (the last one targets `<end>`), and the teacher-forcing
/// inputs that realize the ground-truth sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTargets {
    /// One row per supervised step, each of length vocab_len + N.
    pub rows: Vec<Vec<f64>>,
    /// `<begin>` followed by one teacher pick per answer word; length equals
    /// the supervised step count.
    pub teacher_inputs: Vec<StepInput>,
    pub vocab_len: usize,
    pub ocr_slots: usize,
}

impl StepTargets {
    pub fn supervised_steps(&self) -> usize {
        self.rows.len()
    }
}

/// Why an example cannot be supervised.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetsOutcome {
    Ready(StepTargets),
    /// Some answer word exists in neither the vocabulary nor the OCR list.
    Unreachable { word: String },
}

/// Build multi-label step targets for one tokenized answer.
///
/// For the word at step t every matching candidate is positive: the
/// vocabulary entry (when the fixed vocabulary is enabled) and every OCR slot
/// whose normalized text equals the word (when copying is enabled). The
/// final supervised step targets `<end>`. The teacher input for the next
/// step prefers the lowest-index matching OCR token so the pointer path sees
/// training signal; otherwise it replays the vocabulary entry. Answers
/// longer than T-1 words are truncated to leave room for `<end>`.
pub fn build_step_targets(
    answer_words: &[String],
    vocab: &AnswerVocab,
    ocr_texts: &[String],
    config: &ModelConfig,
) -> TargetsOutcome {
    let n_slots = config.max_ocr_tokens;
    let ocr_texts = &ocr_texts[..ocr_texts.len().min(n_slots)];
    let v = vocab.len();
    let width = v + n_slots;
    let keep = answer_words.len().min(config.max_decode_steps - 1);

    let mut rows = Vec::with_capacity(keep + 1);
    let mut teacher_inputs = Vec::with_capacity(keep + 1);
    teacher_inputs.push(StepInput::Vocab(crate::model::BEGIN_INDEX));

    for word in &answer_words[..keep] {
        let vocab_idx = if config.enable_fixed_vocab {
            vocab.lookup(word).filter(|&i| i >= 2)
        } else {
            None
        };
        let ocr_matches: Vec<usize> = if config.enable_ocr_copy {
            ocr_texts
                .iter()
                .enumerate()
                .filter(|(_, t)| t.as_str() == word)
                .map(|(i, _)| i)
                .collect()
        } else {
            Vec::new()
        };
        if vocab_idx.is_none() && ocr_matches.is_empty() {
            return TargetsOutcome::Unreachable { word: word.clone() };
        }

        let mut row = vec![0.0; width];
        if let Some(i) = vocab_idx {
            row[i] = 1.0;
        }
        for &slot in &ocr_matches {
            row[v + slot] = 1.0;
        }
        rows.push(row);

        teacher_inputs.push(match ocr_matches.first() {
            Some(&slot) => StepInput::Ocr(slot),
            None => StepInput::Vocab(vocab_idx.expect("checked above")),
        });
    }

    let mut end_row = vec![0.0; width];
    end_row[END_INDEX] = 1.0;
    rows.push(end_row);

    TargetsOutcome::Ready(StepTargets {
        rows,
        teacher_inputs,
        vocab_len: v,
        ocr_slots: n_slots,
    })
}
