//! Experiment runners behind the `entroscope` command line.
//!
//! Every runner takes an [`ExperimentConfig`] and returns plain records;
//! rendering and exit codes live in the binary.

pub mod additivity;
pub mod channel;
pub mod config;
pub mod explore;
pub mod phi_scan;
pub mod report;
pub mod singular;
pub mod validation;

pub use config::{Command, ConfigError, ExperimentConfig, Format, Units};
pub use report::{emit_report, parse_json, CheckRecord, Envelope, Record, ReportError};
