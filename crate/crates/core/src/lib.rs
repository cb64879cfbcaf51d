//! Prediction of word-level reading-time features (FFD/TRT mean and std)
//! from text, over a 48-configuration experiment grid: context mode ×
//! encoder family × fine-tuning regime × subword pooling × lexical-feature
//! augmentation, with MAE evaluation and report tables.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); metric
//! aggregation and reports are always `f64`.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod regress;
pub mod scalar;
pub mod sweep;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f32 aliases: the precision the CLI and sweeps run at.
pub type Dataset32 = corpus::Dataset<f32>;

/// f64 aliases: the precision gradient checks and numeric oracles run at.
pub type Dataset64 = corpus::Dataset<f64>;
