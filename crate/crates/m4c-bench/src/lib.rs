//! Shared fixtures for the criterion benches.

use m4c_core::features::{DetectedObject, OcrToken, Question, ScenePack};
use m4c_core::model::{FeatureDims, ModelConfig, ModelParams, QuestionFeatures};

pub fn bench_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 128,
        layers: 2,
        heads: 4,
        ffn_dim: 512,
        max_question_words: 8,
        max_objects: 4,
        max_ocr_tokens: 10,
        max_decode_steps: 6,
        vocab_size: 32,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn bench_dims() -> FeatureDims {
    FeatureDims {
        question: QuestionFeatures::Learned { vocab_size: 48 },
        object_appearance: 16,
        ocr_appearance: 16,
        ocr_word: 16,
    }
}

pub fn bench_params() -> ModelParams {
    ModelParams::init(&bench_config(), bench_dims(), 32, 7).expect("valid bench config")
}

pub fn bench_scene() -> ScenePack {
    let token = |i: usize| OcrToken {
        text: format!("tkn{i}"),
        bbox: [10.0 * i as f64, 5.0, 10.0 * i as f64 + 8.0, 12.0],
        feat_appearance: (0..16).map(|j| ((i * 17 + j) % 7) as f64 / 7.0 - 0.5).collect(),
        feat_word: (0..16).map(|j| ((i * 13 + j) % 5) as f64 / 5.0 - 0.5).collect(),
    };
    ScenePack {
        id: "bench".into(),
        image_size: (160.0, 120.0),
        question: Question::TokenIds(vec![0, 1, 2, 3]),
        objects: (0..2)
            .map(|i| DetectedObject {
                bbox: [5.0 * i as f64, 0.0, 40.0, 30.0],
                feat_appearance: (0..16).map(|j| ((i * 5 + j) % 3) as f64 - 1.0).collect(),
            })
            .collect(),
        ocr: (0..8).map(token).collect(),
        answers: vec!["tkn0 tkn1".into()],
    }
}
