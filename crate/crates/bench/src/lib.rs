//! Harness around `gatherconv`: oracle verification and efficiency benchmarks
//! over the layer catalog, with JSON/CSV reports.

pub mod config;
pub mod inputs;
pub mod report;
pub mod run;

pub use config::{ReportFormat, RunConfig, DEVICE_SPEC_ENV};
pub use report::{emit_report, parse_report, render_report, summary_table};
pub use run::{run_bench, run_verify, BenchRun, LayerVerification, VerifyReport};

use gatherconv::ConvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("report: {0}")]
    Report(String),
}

impl BenchError {
    /// Process exit code: everything here is a configuration-class failure.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
