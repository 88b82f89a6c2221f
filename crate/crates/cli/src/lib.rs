//! Configuration loading and experiment orchestration for the `shelab`
//! binary.

pub mod config;
pub mod run;

pub use config::{load_config, parse_config, Command, ConfigError, ExperimentConfig};
pub use run::{run, RunError};
