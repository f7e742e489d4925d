//! Experiment runner for `hybridkernel-core`: configuration, the six
//! experiments, and their CSV/JSON output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{parse_config, Experiment, ExperimentConfig, Seeds};
pub use error::{AppError, Result};
pub use output::run;
