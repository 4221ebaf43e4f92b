//! Bias-only fine-tuning of a small BERT-style encoder, built from scratch:
//! reverse-mode autodiff, the encoder, a named parameter registry with
//! trainability selectors, AdamW restricted to the trainable set, synthetic
//! tasks, and the measurement suite.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod model;
pub mod params;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::Tensor;
