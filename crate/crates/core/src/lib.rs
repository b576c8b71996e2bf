//! Group-relative policy optimization for sparse binary rewards.
//!
//! This crate implements the GRPO objective and its hysteretic variants
//! (fixed HPO, adaptive A-HPO, the variance-aware and normalization-isolating
//! ablations) on top of an exactly differentiable tabular softmax policy, so
//! every weighting rule and diagnostic can be checked against independent
//! oracles. It is `no_std` and only needs `alloc`; file formats, the CLI and
//! experiment orchestration live in the `hpo-lab` crate.
//!
//! The objective is maximized everywhere: gradients returned by
//! [`objective::objective_gradient`] are ascent directions.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod advantage;
pub mod analytics;
pub mod config;
pub mod error;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod tasks;
pub mod trainer;
pub mod types;

pub use config::{EstimatorVariant, Normalization, OptimizerKind, TrainConfig};
pub use error::{Error, Result};
pub use policy::{Conditioning, TabularPolicy};
pub use types::{AdvantageSet, Batch, BatchStats, Estimator, Group, Token, Trajectory};
