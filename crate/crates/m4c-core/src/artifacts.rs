//! Run-directory layout: a trained model is a binary checkpoint plus a JSON
//! description (config, feature dims, answer vocabulary) that makes it
//! loadable without the training data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnswerVocab, FeatureDims, ModelConfig, ModelParams};

pub const CHECKPOINT_FILE: &str = "checkpoint.m4c";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_LOG_FILE: &str = "metrics.log";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: ModelConfig,
    pub dims: FeatureDims,
    pub vocab: AnswerVocab,
}

impl SavedModel {
    pub fn save(
        dir: &Path,
        params: &ModelParams,
        config: &ModelConfig,
        vocab: &AnswerVocab,
    ) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        params.save(&dir.join(CHECKPOINT_FILE))?;
        let described = SavedModel {
            config: config.clone(),
            dims: params.dims,
            vocab: vocab.clone(),
        };
        let text = serde_json::to_string_pretty(&described)
            .map_err(|e| Error::Validation(format!("model description: {e}")))?;
        std::fs::write(dir.join(MODEL_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(ModelParams, SavedModel)> {
        let text = std::fs::read_to_string(dir.join(MODEL_FILE))?;
        let described: SavedModel = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("model description: {e}")))?;
        described.config.validate()?;
        let params = ModelParams::load(
            &dir.join(CHECKPOINT_FILE),
            &described.config,
            described.dims,
            described.vocab.len(),
        )?;
        Ok((params, described))
    }
}
