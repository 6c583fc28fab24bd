//! Config-driven experiment runner for the `assim` command-line tool.

pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod runner;

pub use config::{parse_config, ExperimentConfig, RawConfig};
pub use error::CliError;
pub use runner::{run_experiment, RunReport};
