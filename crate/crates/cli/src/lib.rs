//! Experiment runner and analysis front-end for the `edo` binary.

pub mod commands;
pub mod config;

pub use commands::{Failure, RunOptions};
pub use config::ExperimentConfig;
