//! Experiment runner for CSI localization: simulates scenarios, builds
//! datasets, trains and evaluates models, runs transfer and ablation sweeps
//! and renders reports. Every training run is logged to `runs.jsonl`.

pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod runlog;

pub use cli::{run_command, Cli};
pub use config::ExperimentConfig;
pub use error::CliError;
pub use runlog::RunRecord;
