//! Command-line surface, configuration files, field output and reports.

pub mod commands;
pub mod config;
pub mod fields;
pub mod report;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub use commands::{run, Cli};
pub use config::{parse_config, ConfigError, RunConfig};
pub use fields::{read_field_csv, write_field, FieldFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Field(#[from] fields::FieldError),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Invariant(_)) => EXIT_INVARIANT,
            CliError::Config(ConfigError::Io { .. }) => EXIT_IO,
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Field(_) => EXIT_IO,
            CliError::NonConvergence(_) => EXIT_NONCONVERGENCE,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_IO => "io",
            EXIT_CONFIG => "config",
            EXIT_NONCONVERGENCE => "nonconvergence",
            EXIT_INVARIANT => "invariant",
            _ => "error",
        }
    }

    /// One-line machine-readable record.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            exit_code: i32,
            message: String,
        }
        serde_json::to_string(&Record {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("record serializes")
    }
}
