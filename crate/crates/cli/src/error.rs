use std::path::PathBuf;

use guardrail::benchgen::BenchError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input {path}: {message}")]
    MissingInput { path: PathBuf, message: String },
    #[error("{path}: format version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: schema violation: {message}")]
    Schema { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] guardrail::Error),
    #[error("benchmark generation failed: {0}")]
    Bench(#[from] BenchError),
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
}

/// The JSON object printed on stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Version { .. } => 4,
            CliError::Schema { .. } => 5,
            CliError::Core(guardrail::Error::FormatVersion { .. }) => 4,
            CliError::Core(guardrail::Error::InvalidConfig(_)) => 2,
            CliError::Bench(
                BenchError::InvalidSpec(_) | BenchError::InvalidShortcut(_) | BenchError::StrengthOutOfRange(_),
            ) => 2,
            CliError::Core(_) | CliError::Bench(_) => 6,
            CliError::Write { .. } => 7,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.code() {
            2 => "invalid_config",
            3 => "missing_input",
            4 => "version_mismatch",
            5 => "schema_violation",
            6 => "computation_failed",
            _ => "write_failed",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            code: self.code(),
            kind: self.kind(),
            message: self.to_string(),
        }
    }
}
