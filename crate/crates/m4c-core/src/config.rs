//! Run configuration: the model hyper-parameters, learning rate schedule,
//! and training options, merged into one view that loads from a flat
//! `key = value` file. Unknown keys are rejected; defaults match the
//! reference configuration.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::model::ModelConfig;
use crate::train::{LrSchedule, TrainOptions};

/// Everything a run needs, resolvable before any subcommand executes.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub eval_interval: usize,
    pub seed: u64,
    pub vocab_min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            schedule: LrSchedule::default(),
            batch_size: 128,
            clip_norm: 0.25,
            eval_interval: 500,
            seed: 0,
            vocab_min_count: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Validation(format!("config key {key}: cannot parse value {value:?}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(Error::Validation(format!(
            "config key {key}: expected a boolean, got {value:?}"
        ))),
    }
}

impl RunConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected so typos cannot silently fall back to defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected key = value, got {raw_line:?}"),
                });
            };
            config
                .apply(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    msg: e.to_string(),
                })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Apply one key/value pair (also used for command-line overrides).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "embed_dim" => self.model.embed_dim = parse(key, value)?,
            "layers" => self.model.layers = parse(key, value)?,
            "heads" => self.model.heads = parse(key, value)?,
            "ffn_dim" => self.model.ffn_dim = parse(key, value)?,
            "max_question_words" => self.model.max_question_words = parse(key, value)?,
            "max_objects" => self.model.max_objects = parse(key, value)?,
            "max_ocr_tokens" => self.model.max_ocr_tokens = parse(key, value)?,
            "max_decode_steps" => self.model.max_decode_steps = parse(key, value)?,
            "vocab_size" => self.model.vocab_size = parse(key, value)?,
            "dropout" => self.model.dropout = parse(key, value)?,
            "enable_fixed_vocab" => self.model.enable_fixed_vocab = parse_bool(key, value)?,
            "enable_ocr_copy" => self.model.enable_ocr_copy = parse_bool(key, value)?,
            "base_lr" => self.schedule.base_lr = parse(key, value)?,
            "warmup_factor" => self.schedule.warmup_factor = parse(key, value)?,
            "warmup_iters" => self.schedule.warmup_iters = parse(key, value)?,
            "decay_factor" => self.schedule.decay_factor = parse(key, value)?,
            "decay_steps" => {
                self.schedule.decay_steps = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse("decay_steps", s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "max_iters" => self.schedule.max_iters = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "vocab_min_count" => self.vocab_min_count = parse(key, value)?,
            other => {
                return Err(Error::Validation(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Validation("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn train_options(&self, metric: MetricKind) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
            eval_interval: self.eval_interval,
            seed: self.seed,
            vocab_min_count: self.vocab_min_count,
            val_metric: metric,
            log_path: None,
            initial_params: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_table() {
        let c = RunConfig::default();
        assert_eq!(c.model.max_question_words, 20);
        assert_eq!(c.model.max_objects, 100);
        assert_eq!(c.model.max_ocr_tokens, 50);
        assert_eq!(c.model.max_decode_steps, 12);
        assert_eq!(c.model.embed_dim, 768);
        assert_eq!(c.model.layers, 4);
        assert_eq!(c.model.heads, 12);
        assert_eq!(c.model.ffn_dim, 3072);
        assert_eq!(c.model.dropout, 0.1);
        assert_eq!(c.schedule.base_lr, 1e-4);
        assert_eq!(c.schedule.warmup_factor, 0.2);
        assert_eq!(c.schedule.warmup_iters, 2000);
        assert_eq!(c.clip_norm, 0.25);
        assert_eq!(c.schedule.decay_factor, 0.1);
        assert_eq!(c.schedule.decay_steps, vec![14_000, 19_000]);
        assert_eq!(c.schedule.max_iters, 24_000);
        assert_eq!(c.batch_size, 128);
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "
            # synthetic run
            embed_dim = 128
            layers=2
            heads = 4
            decay_steps = 1400, 1900
            dropout = 0.0
            enable_ocr_copy = true
            seed = 9
        ";
        let c = RunConfig::parse_str(text).unwrap();
        assert_eq!(c.model.embed_dim, 128);
        assert_eq!(c.model.layers, 2);
        assert_eq!(c.model.heads, 4);
        assert_eq!(c.schedule.decay_steps, vec![1400, 1900]);
        assert_eq!(c.model.dropout, 0.0);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse_str("embd_dim = 128").unwrap_err();
        assert!(err.to_string().contains("embd_dim"), "{err}");
    }

    #[test]
    fn bad_values_carry_the_line_number() {
        let err = RunConfig::parse_str("layers = 2\nheads = twelve").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn inconsistent_configs_fail_validation() {
        // 128 % 5 != 0
        assert!(RunConfig::parse_str("embed_dim = 128\nheads = 5").is_err());
    }
}
