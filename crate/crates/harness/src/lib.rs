//! Experiment runner for the `pfsmooth` particle smoothers.
//!
//! A TOML [`ExperimentConfig`] names a model, a filter and smoother, and an
//! experiment; [`run_experiment`] executes it per seed and sweep point and
//! returns a [`RunReport`] that [`emit_report`] writes as CSV and JSON.

pub mod config;
pub mod error;
pub mod problem;
pub mod report;
pub mod run;
pub mod selftest;

pub use config::{ExperimentConfig, ExperimentKind, SmootherKind, TargetFunction};
pub use error::HarnessError;
pub use report::{emit_report, OutputPaths, Row, RunReport, Summary, CSV_HEADER};
pub use run::{oracle_report, run_experiment, run_with, Mode};
pub use selftest::{selftest, Mutation, SelftestReport};
