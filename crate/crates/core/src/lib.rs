//! Zero-shot industrial image anomaly detection.
//!
//! A category name drives three pluggable models: a text generator writes
//! normal and defective captions, a grounded detector finds the product,
//! and a joint image-text embedder compares the whole frame and its object
//! crops against the captions. The per-image anomaly score is a two-way
//! comparison of the fused image feature with the pooled normal and
//! anomaly text directions.
//!
//! Start with [`pipeline::run_eval`] or the runnable programs under `examples/`.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod grounding;
pub mod http;
pub mod metrics;
pub mod mock;
pub mod pipeline;
pub mod plot;
pub mod prompt_bank;
pub mod scorer;
pub mod types;

pub use error::{Error, Result};
pub use types::{unit_normalize, validate_box, BoundingBox, CategoryId, EmbeddingVector, ImageBuffer, Label};
