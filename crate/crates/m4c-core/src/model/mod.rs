//! The pointer-augmented multimodal transformer.

mod config;
mod net;
mod params;
mod vocab;

pub use config::ModelConfig;
pub use net::{
    build_joint_mask, decoder_input_rows, embed_objects, embed_ocr, embed_question, forward_scene,
    pointer_scores, step_scores, transformer_forward, vocab_scores, ForwardPass, Graph, StepInput,
    ATTENTION_MASK_OFF, SCORE_MASKED,
};
pub use params::{FeatureDims, ModelParams, ParamStore, QuestionFeatures};
pub use vocab::{is_special, AnswerVocab, BEGIN_INDEX, BEGIN_TOKEN, END_INDEX, END_TOKEN};

#[cfg(test)]
mod tests;
