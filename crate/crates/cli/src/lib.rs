//! Experiment runner for federated activity detection.

pub mod config;
pub mod emit;
pub mod macs;
pub mod runner;

pub use config::{parse_config, parse_config_str, Architecture, ConfigError, Detector, Emit, ExperimentConfig};
pub use emit::emit_results;
pub use runner::{run_experiment, ResultBundle, RunError};
