//! Pointer-augmented multimodal transformer for text-reading VQA, desk scale.
//!
//! The crate bundles everything needed to train and evaluate the model on
//! synthetic scene data: a dense-tensor autodiff engine ([`tensor`]), scene
//! featurization with PHOC and relative-bbox features ([`features`]), the
//! multimodal transformer with its vocabulary and pointer scoring heads
//! ([`model`]), iterative answer decoding ([`decode`]), teacher-forced
//! training ([`train`]), evaluation metrics ([`metrics`]), and a synthetic
//! scene generator ([`synth`]).

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, TensorId};
