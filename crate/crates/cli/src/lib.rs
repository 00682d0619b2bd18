//! Experiment runner for the chaos-spde library.
//!
//! Pipeline: `generate` builds the seeded dataset, `train` fits a surrogate
//! and writes a loss trace, `evaluate` emits metrics and plot surfaces,
//! `rates` reports the a-priori truncation error terms, `all` chains them.
//! Every CSV carries a header row and a configuration-hash column.

pub mod config;
pub mod model_io;
pub mod pipeline;

use std::fmt;

/// Exit code 2: configuration or input-file problem.
/// Exit code 3: numerical failure during computation.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<chaos_spde::Error> for CliError {
    fn from(err: chaos_spde::Error) -> Self {
        match err {
            chaos_spde::Error::InvalidParameter { .. }
            | chaos_spde::Error::DimensionMismatch { .. }
            | chaos_spde::Error::IndexOutOfRange { .. } => CliError::Config(err.to_string()),
            chaos_spde::Error::NonFinite { .. }
            | chaos_spde::Error::Overflow { .. }
            | chaos_spde::Error::OutOfDomain { .. } => CliError::Numeric(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Config(err.to_string())
    }
}
