//! Time-and-order rotary position embeddings for event-stream sequence models.
//!
//! The crate provides:
//!
//! - [`rope`]: frequency banks, timestamp normalization, the unified
//!   index/time angle fusion with its early-fusion, split-by-dimension and
//!   split-by-head instantiations, plane rotation, and diagnostic kernels;
//! - [`attention`]: a multi-head causal attention forward pass with pluggable
//!   positional encodings (the rotary family plus absolute and relative-bias
//!   baselines) and attention-probability capture;
//! - [`model`]: a toy autoregressive next-item recommender with hand-written
//!   analytic gradients, an Adam optimizer, finite-difference gradient
//!   verification, and bit-exact checkpointing;
//! - [`data`]: a synthetic event-stream generator with session, rhythm, and
//!   calendar structure, ratings-log ingestion, 5-core filtering, and
//!   leave-one-out / last-day splitting;
//! - [`eval`]: HR@k / NDCG@k ranking metrics and attention distance/entropy
//!   analytics;
//! - [`harness`]: declarative experiment configs, the encoding comparison
//!   grid, the capacity-ratio sweep, attention analytics runs, and
//!   deterministic result export.

pub mod attention;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod mat;
pub mod model;
pub mod rope;
pub mod seeding;

pub use error::{Error, Result};
