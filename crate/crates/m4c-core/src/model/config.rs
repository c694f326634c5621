use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model hyper-parameters. Defaults follow the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Joint embedding dimension d.
    pub embed_dim: usize,
    /// Transformer layers L.
    pub layers: usize,
    /// Attention heads per layer.
    pub heads: usize,
    /// Feed-forward hidden size.
    pub ffn_dim: usize,
    /// Max question words K.
    pub max_question_words: usize,
    /// Max detected objects M.
    pub max_objects: usize,
    /// Max OCR tokens N.
    pub max_ocr_tokens: usize,
    /// Max decoding steps T.
    pub max_decode_steps: usize,
    /// Fixed answer vocabulary cap V, including <begin> and <end>.
    pub vocab_size: usize,
    pub dropout: f64,
    /// Score non-special fixed-vocabulary words (off = "w/o fixed vocabulary").
    pub enable_fixed_vocab: bool,
    /// Score OCR tokens through the pointer head (off = "w/o OCR copying").
    pub enable_ocr_copy: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 768,
            layers: 4,
            heads: 12,
            ffn_dim: 3072,
            max_question_words: 20,
            max_objects: 100,
            max_ocr_tokens: 50,
            max_decode_steps: 12,
            vocab_size: 5002,
            dropout: 0.1,
            enable_fixed_vocab: true,
            enable_ocr_copy: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Validation(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.max_decode_steps < 1 {
            return Err(Error::Validation("max_decode_steps must be >= 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Validation(
                "vocab_size must be >= 2 to hold the special tokens".into(),
            ));
        }
        if !self.enable_fixed_vocab && !self.enable_ocr_copy {
            return Err(Error::Validation(
                "at least one of enable_fixed_vocab / enable_ocr_copy must be on".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!(
                "dropout {} must be in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Joint sequence length K + M + N + T.
    pub fn seq_len(&self) -> usize {
        self.max_question_words + self.max_objects + self.max_ocr_tokens + self.max_decode_steps
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}
