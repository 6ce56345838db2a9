use std::fmt;

use serde::Serialize;

/// A failed run, classified by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or crawl/join specification.
    Config(String),
    /// Reading inputs or writing outputs failed.
    Io(String),
    /// An engine error raised while executing a valid configuration.
    Engine(hoca_core::Error),
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_ENGINE: u8 = 4;

/// The machine-readable record written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub error: &'a str,
    pub kind: &'a str,
    pub exit_code: u8,
    pub message: String,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Engine(_) => EXIT_ENGINE,
        }
    }

    /// `config`, `io` or `engine`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Engine(_) => "engine",
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Engine(e) => e.kind(),
            other => other.category(),
        }
    }

    pub fn record(&self) -> ErrorRecord<'_> {
        ErrorRecord {
            error: self.category(),
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hoca_core::Error> for CliError {
    /// Specification and schema errors are configuration errors; storage and
    /// parse errors are I/O errors; everything else is an engine error.
    fn from(e: hoca_core::Error) -> Self {
        use hoca_core::Error as E;
        match e {
            E::Spec(_) | E::Schema(_) | E::Request(_) => CliError::Config(e.to_string()),
            E::Io(_) | E::Csv(_) | E::Json(_) | E::Format(_) | E::Checksum { .. } => CliError::Io(e.to_string()),
            other => CliError::Engine(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
