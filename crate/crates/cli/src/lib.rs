//! Experiment harness for tube polymers: configs, runs, CSV output and
//! regression fixtures.

pub mod config;
pub mod error;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, Kind, Overrides};
pub use error::CliError;
pub use run::{execute, run, Output, RunSummary, Table};
pub use verify::{verify, FixtureReport, VerifyOptions};
