//! Unified generative recommendation: one autoregressive transformer over
//! interleaved item/behavior tokens serves retrieval (next-item prediction
//! against the full catalog) and ranking (click probability) at once.
//! Training couples the two stages with a ranking-driven negative-sample
//! enhancer and a convergence-rate-driven adaptive loss weighter.
//!
//! Module map:
//! - [`data`] — interaction parsing, leave-one-out sequence building,
//!   negative sampling, processed-store persistence, synthetic corpora;
//! - [`model`] — parameters, tape-based training forward, cache-based
//!   inference forward, target-aware candidate scoring;
//! - [`objectives`] — sampled-softmax retrieval loss and stable-logits BCE;
//! - [`weighter`] — loss-rate tracking and softmax loss weights;
//! - [`enhancer`] — hard-negative mining, potential-positive relabeling,
//!   negative-set composition;
//! - [`eval`] — full-catalog NDCG/HR/MRR and target-aware AUC;
//! - [`trainer`] — the epoch loop, checkpointing, metrics, sweeps.

pub mod config;
pub mod data;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod trainer;
pub mod weighter;

pub use config::RunConfig;
pub use error::CoreError;
