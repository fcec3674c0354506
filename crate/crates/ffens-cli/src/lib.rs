//! Command-line front end for the ffens-core engine: experiment
//! configuration, dataset resolution, and the train / evaluate / analyze /
//! reproduce commands.

pub mod commands;
pub mod config;
pub mod data;

pub use config::{CliError, CliResult, DatasetId, ExperimentConfig};
