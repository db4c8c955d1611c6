//! Experiment runner for `smc-core`: configuration, experiments and
//! CSV/JSON reports. The `smc` binary is a thin command-line layer over
//! [`experiments::run_experiment`].

pub mod config;
pub mod experiments;
pub mod report;
pub mod stats;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, Format};
pub use experiments::run_experiment;
pub use report::Report;
