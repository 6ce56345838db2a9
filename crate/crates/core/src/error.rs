use std::io;

use thiserror::Error;

/// Errors produced by the cube engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A name or type did not match the active schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A frame handed to a model does not match the features it requested.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("model `{model}` failed: {message}")]
    Model { model: String, message: String },

    /// Input data violates a model precondition (e.g. negative weights for an apriori signal).
    #[error("data error: {0}")]
    Data(String),

    /// Arguments outside the mathematical domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Equal population denominators; the degenerate formula must be used.
    #[error("degenerate population: test and control denominators are equal ({0})")]
    Degenerate(f64),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid crawl, join or model specification.
    #[error("spec error: {0}")]
    Spec(String),

    #[error("region space of {size} regions exceeds the safety cap of {cap}")]
    Refused { size: usize, cap: usize },

    #[error("apriori violation: signal `{signal}` rose from {parent} at {parent_region} to {child} at {child_region}")]
    AprioriViolation {
        signal: String,
        parent_region: String,
        child_region: String,
        parent: f64,
        child: f64,
    },

    #[error("join error: {0}")]
    Join(String),

    /// A feature request that cannot be resolved (e.g. an ambiguous name).
    #[error("request error: {0}")]
    Request(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("checksum mismatch for `{file}`: manifest {expected:016x}, found {found:016x}")]
    Checksum {
        file: String,
        expected: u64,
        found: u64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn model(model: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Model {
            model: model.into(),
            message: message.into(),
        }
    }

    /// Short stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Contract(_) => "contract",
            Error::Model { .. } => "model",
            Error::Data(_) => "data",
            Error::Domain(_) => "domain",
            Error::Degenerate(_) => "degenerate",
            Error::Numeric(_) => "numeric",
            Error::Spec(_) => "spec",
            Error::Refused { .. } => "refused",
            Error::AprioriViolation { .. } => "apriori_violation",
            Error::Join(_) => "join",
            Error::Request(_) => "request",
            Error::Consistency(_) => "consistency",
            Error::Checksum { .. } => "checksum",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
