//! IO, model containers, experiment orchestration, and reporting around the
//! `orion-core` analysis library. The binary target exposes each runner
//! command as a CLI subcommand.

pub mod artifacts;
pub mod config;
pub mod container;
pub mod error;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
