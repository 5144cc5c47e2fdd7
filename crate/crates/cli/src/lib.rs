//! Command-line experiment runner: configuration, subcommands, reports.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
