//! Experiment runner for `hpo-core`: configuration files, on-disk formats,
//! training runs, weight sweeps, the sign-frequency oracle and batch
//! diagnostics. The `hpo-lab` binary is a thin shell over this crate.

pub mod commands;
pub mod error;
pub mod formats;
pub mod run;
pub mod settings;

pub use error::{LabError, Result};
pub use settings::LabConfig;
