//! Command-line orchestration for the relaxation-stability experiments:
//! configuration, artifact formats, the resumable stage scheduler and the
//! aggregated report.

pub mod artifact;
pub mod config;
pub mod error;
pub mod layout;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::run_command;
