//! Reliable/unreliable social-post classification toolkit.
//!
//! The pipeline ingests a tabular post corpus, engineers metadata features
//! (engagement counts, date-time decomposition, user reputation, image
//! statistics), normalizes the post text, and classifies posts with either
//! tabular models, a block-concatenation text encoder, or a fused multi-input
//! model combining both. Training follows a fine-tuning regimen with warmup,
//! decoupled weight decay, gradual unfreezing, discriminative learning rates,
//! and label-smoothing cross-entropy. Evaluation is ROC-AUC with a rank-based
//! estimator backed by a brute-force pairwise oracle.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod nn;
pub mod pipeline;
pub mod tabular;
pub mod textenc;
pub mod training;

pub use error::{Error, Result};
