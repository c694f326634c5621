use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::features::{QuestionMode, SceneManifest, PHOC_DIM};
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Question featurization, as fixed by the dataset manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionFeatures {
    /// Trainable token table of this many entries.
    Learned { vocab_size: usize },
    /// Precomputed per-word vectors of this width.
    Ingested { dim: usize },
}

/// Input feature widths the projections are sized against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub question: QuestionFeatures,
    pub object_appearance: usize,
    pub ocr_appearance: usize,
    pub ocr_word: usize,
}

impl FeatureDims {
    pub fn from_manifest(manifest: &SceneManifest) -> Result<Self> {
        manifest.validate()?;
        let question = match manifest.mode {
            QuestionMode::Learned => QuestionFeatures::Learned {
                vocab_size: manifest.question_vocab.as_ref().expect("validated").len(),
            },
            QuestionMode::Ingested => QuestionFeatures::Ingested {
                dim: manifest.question_dim.expect("validated"),
            },
        };
        Ok(FeatureDims {
            question,
            object_appearance: manifest.object_feat_dim,
            ocr_appearance: manifest.ocr_appearance_dim,
            ocr_word: manifest.ocr_word_dim,
        })
    }
}

/// Named parameter tensors in a stable insertion order. Names are unique;
/// order defines the checkpoint layout and the optimizer slot mapping.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Internal(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name.to_string(), tensor.with_grad());
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl ExactSizeIterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.entries.values().map(|t| t.numel()).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Fresh zero gradient buffers, one per parameter, in store order.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.entries.values().map(|t| vec![0.0; t.numel()]).collect()
    }
}

/// All learnable parameters plus the input dims they were sized against.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub store: ParamStore,
    pub dims: FeatureDims,
    /// Actual vocabulary length (<= config cap), fixing the head sizes.
    pub vocab_len: usize,
}

fn truncated_normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("valid std");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect()
}

impl ModelParams {
    /// Initialize all parameters: truncated normal (std 0.02) weights, zero
    /// biases, unit-gamma/zero-beta layer norms.
    pub fn init(
        config: &ModelConfig,
        dims: FeatureDims,
        vocab_len: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_len < 2 || vocab_len > config.vocab_size {
            return Err(Error::Validation(format!(
                "vocabulary length {} outside [2, {}]",
                vocab_len, config.vocab_size
            )));
        }
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let weight = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize| {
            let t = Tensor::new(vec![rows, cols], truncated_normal(rng, rows * cols, 0.02))
                .expect("sized data");
            store.insert(name, t)
        };
        let zeros = |store: &mut ParamStore, name: &str, n: usize| {
            store.insert(name, Tensor::zeros(vec![n]))
        };
        let norm = |store: &mut ParamStore, prefix: &str| -> Result<()> {
            store.insert(
                &format!("{prefix}.gamma"),
                Tensor::new(vec![d], vec![1.0; d]).expect("sized data"),
            )?;
            store.insert(&format!("{prefix}.beta"), Tensor::zeros(vec![d]))
        };

        match dims.question {
            QuestionFeatures::Learned { vocab_size } => {
                weight(&mut store, &mut rng, "question.token_embedding", vocab_size, d)?;
                weight(
                    &mut store,
                    &mut rng,
                    "question.position_embedding",
                    config.max_question_words,
                    d,
                )?;
            }
            QuestionFeatures::Ingested { dim } => {
                weight(&mut store, &mut rng, "question.proj", dim, d)?;
            }
        }
        norm(&mut store, "question.norm")?;

        weight(&mut store, &mut rng, "object.appearance_proj", dims.object_appearance, d)?;
        norm(&mut store, "object.appearance_norm")?;
        weight(&mut store, &mut rng, "object.bbox_proj", 4, d)?;
        norm(&mut store, "object.bbox_norm")?;

        weight(&mut store, &mut rng, "ocr.word_proj", dims.ocr_word, d)?;
        weight(&mut store, &mut rng, "ocr.appearance_proj", dims.ocr_appearance, d)?;
        weight(&mut store, &mut rng, "ocr.phoc_proj", PHOC_DIM, d)?;
        norm(&mut store, "ocr.content_norm")?;
        weight(&mut store, &mut rng, "ocr.bbox_proj", 4, d)?;
        norm(&mut store, "ocr.bbox_norm")?;

        for layer in 0..config.layers {
            for part in ["query", "key", "value", "output"] {
                weight(&mut store, &mut rng, &format!("layer{layer}.attn.{part}.weight"), d, d)?;
                zeros(&mut store, &format!("layer{layer}.attn.{part}.bias"), d)?;
            }
            norm(&mut store, &format!("layer{layer}.attn_norm"))?;
            weight(&mut store, &mut rng, &format!("layer{layer}.ffn.expand.weight"), d, config.ffn_dim)?;
            zeros(&mut store, &format!("layer{layer}.ffn.expand.bias"), config.ffn_dim)?;
            weight(&mut store, &mut rng, &format!("layer{layer}.ffn.contract.weight"), config.ffn_dim, d)?;
            zeros(&mut store, &format!("layer{layer}.ffn.contract.bias"), d)?;
            norm(&mut store, &format!("layer{layer}.ffn_norm"))?;
        }

        weight(&mut store, &mut rng, "vocab_head.weight", vocab_len, d)?;
        zeros(&mut store, "vocab_head.bias", vocab_len)?;

        weight(&mut store, &mut rng, "pointer.ocr_proj", d, d)?;
        zeros(&mut store, "pointer.ocr_bias", d)?;
        weight(&mut store, &mut rng, "pointer.dec_proj", d, d)?;
        zeros(&mut store, "pointer.dec_bias", d)?;

        weight(&mut store, &mut rng, "decoder.step_embedding", config.max_decode_steps, d)?;
        weight(&mut store, &mut rng, "decoder.kind_embedding", 2, d)?;

        Ok(ModelParams {
            store,
            dims,
            vocab_len,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_checkpoint(path, self.store.iter())
    }

    /// Load a checkpoint into a freshly initialized structure; names and
    /// shapes must match exactly.
    pub fn load(
        path: &Path,
        config: &ModelConfig,
        dims: FeatureDims,
        vocab_len: usize,
    ) -> Result<Self> {
        let mut params = Self::init(config, dims, vocab_len, 0)?;
        let loaded = checkpoint::load_checkpoint(path)?;
        if loaded.len() != params.store.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, model needs {}",
                loaded.len(),
                params.store.len()
            )));
        }
        for (name, tensor) in loaded {
            if !params.store.contains(&name) {
                return Err(Error::Validation(format!(
                    "checkpoint parameter {name} not part of this model"
                )));
            }
            let slot = params.store.get_mut(&name);
            if slot.shape != tensor.shape {
                return Err(Error::Validation(format!(
                    "checkpoint parameter {name} has shape {:?}, model needs {:?}",
                    tensor.shape, slot.shape
                )));
            }
            slot.data = tensor.data;
        }
        Ok(params)
    }
}
