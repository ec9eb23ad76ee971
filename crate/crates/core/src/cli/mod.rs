//! Experiment runner: config schema, run/generate/report commands.

pub mod config;
pub mod generate;
pub mod report;
pub mod run;

pub use config::ExperimentConfig;
