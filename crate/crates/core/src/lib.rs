//! Shortcut-learning stress tests and counterfactual debiasing for
//! social-bot detection corpora.
//!
//! The pipeline: partition a labeled corpus into shortcut/standard splits
//! ([`scenario`]), generate counterfactual rewrites through a chat endpoint
//! ([`rewrite`]), rebalance per user ([`text_debias`]) and per class
//! ([`dataset_debias`]), train a debiasing projection over frozen embeddings
//! ([`contrastive`]), and score detectors with accuracy, relative change, and
//! calibration metrics ([`eval`]). [`synth`] generates seeded corpora with a
//! known causal/spurious structure for end-to-end checks.

pub mod contrastive;
pub mod dataset_debias;
pub mod eval;
pub mod model;
pub mod rewrite;
pub mod scenario;
pub mod synth;
pub mod text_debias;
mod util;

pub use util::write_atomic;
