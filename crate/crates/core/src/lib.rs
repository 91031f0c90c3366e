//! Post-hoc transforms for classifiers and the diagnostics around them.
//!
//! Given logits recorded at many checkpoints of one or more training runs,
//! the crate fits temperatures, builds logit ensembles and weight averages,
//! detects when a transform reverses the ranking of checkpoints, and selects
//! checkpoints by their transformed metrics instead of the raw ones.
//!
//! The main entry points are [`store::RunStore`], [`transforms::PosthocContext`],
//! [`diagnostics`] and [`selection`]. The [`synth`] module trains small
//! networks on noisy spirals to produce such runs from scratch.

pub mod calibrate;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod selection;
pub mod store;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
