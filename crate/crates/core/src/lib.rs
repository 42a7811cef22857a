//! Multimodal dementia-detection models built on a small reverse-mode
//! autodiff core: a shifted-window attention acoustic encoder over log-mel
//! spectrograms, a character-CNN plus word-transformer linguistic encoder,
//! and a feature-fusion classifier combining the two.

pub mod acoustic;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod linguistic;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
