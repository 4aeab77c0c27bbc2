//! Experiment runner for layered atmospheric tomography: configuration,
//! subcommands, manifests and run reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

pub use commands::Context;
pub use config::{ExperimentConfig, LoadedConfig};
pub use error::{CliError, Result};
