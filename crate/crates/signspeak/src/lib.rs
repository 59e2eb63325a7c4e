//! Host-side companion to `signspeak-core`: dataset files, checkpoints,
//! run configuration, reports, parallel cross-validation and stream replay.

pub mod checkpoint;
pub mod config;
pub mod cv;
pub mod dataset;
mod error;
pub mod import;
pub mod replay;
pub mod report;

pub use error::{CliError, CliResult, ExitCode};
