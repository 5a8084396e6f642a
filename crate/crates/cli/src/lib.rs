//! Experiment runner for `riskpo-core`: configuration files, training runs
//! with CSV/JSON artifacts, parallel sweeps, check suites and SVG plots.

pub mod checks;
pub mod config;
pub mod error;
pub mod plot;
pub mod runner;
pub mod sweep;

pub use config::RunConfig;
pub use error::{CliError, Result};
