//! Length-efficient reasoning RL on small tabular policies.
//!
//! Synthetic chain tasks ([`tasks`]) are solved by a tabular autoregressive
//! softmax policy ([`policy`]) trained with a clipped surrogate objective,
//! truncation length penalties ([`rewards`]), group- or batch-normalized
//! advantages ([`advantage`]), dynamic sampling and difficulty-aware
//! truncation ([`trainer`]). [`analysis`], [`bias_oracle`] and [`merge`]
//! hold the diagnostics and post-training tools; [`experiment`] ties them
//! into reproducible runs with on-disk artifacts.

pub mod advantage;
pub mod analysis;
pub mod bias_oracle;
pub mod error;
pub mod experiment;
pub mod merge;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
