//! Experiment driver for `mlb-core`: TOML configuration, parallel scenario
//! runs, CSV result files, cross-seed summaries and agent checkpoints.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod summary;

pub use config::{Algorithm, ExperimentPlan, LabConfig};
pub use error::{LabError, Result};
