use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),

    #[error("load error in unit {unit} (row {row}): {message}")]
    Load {
        unit: u32,
        row: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported document version {found} for `{kind}` (expected {expected})")]
    UnsupportedVersion {
        kind: String,
        found: u32,
        expected: u32,
    },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("policy failed on unit {unit}: {source}")]
    Policy {
        unit: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable, machine-parsable class name used by the command-line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::DatasetNotFound(_) => "DatasetNotFound",
            Error::Load { .. } => "LoadError",
            Error::InvalidInput(_) => "InvalidInput",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::Numerical(_) => "NumericalError",
            Error::UnsupportedVersion { .. } => "UnsupportedVersion",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::MissingPrerequisite(_) => "MissingPrerequisite",
            Error::Policy { .. } => "PolicyError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "FormatError",
            Error::Csv(_) => "FormatError",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
