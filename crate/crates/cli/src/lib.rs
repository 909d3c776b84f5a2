//! Experiment runner for the `aggdiff` library: config handling, initial-data
//! and kernel specs, the experiment registry and the run-directory layout.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod spec;
pub mod summary;

pub use config::{Config, ConfigError};
pub use error::{CliError, Result};
pub use experiments::{find, run_experiment, Experiment, REGISTRY};
pub use summary::{validate, Summary};
