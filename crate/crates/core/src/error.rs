use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("arm index {index} out of range for {arms} arms")]
    ArmOutOfRange { index: usize, arms: usize },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Every pair in a signed-rank test had zero difference.
    #[error("test undefined: {0}")]
    UndefinedTest(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}:{column}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("replay exhausted after {rows} rows")]
    EndOfData { rows: usize },

    #[error("results not comparable: {0}")]
    Comparability(String),

    #[error("exact planning supports horizons 1 and 2, got {0}")]
    HorizonUnsupported(usize),

    #[error("chunk {chunk}: {source}")]
    InChunk {
        chunk: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::HorizonUnsupported(_) | Error::Json(_) => ErrorClass::Config,
            Error::Format { .. }
            | Error::EndOfData { .. }
            | Error::InsufficientData(_)
            | Error::Io { .. }
            | Error::Comparability(_)
            | Error::UndefinedTest(_) => ErrorClass::Data,
            Error::InChunk { source, .. } => source.class(),
            Error::Domain(_)
            | Error::ArmOutOfRange { .. }
            | Error::Factorization(_)
            | Error::Degenerate(_)
            | Error::Invariant(_) => ErrorClass::Internal,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_arm(index: usize, arms: usize) -> Result<()> {
    if index < arms {
        Ok(())
    } else {
        Err(Error::ArmOutOfRange { index, arms })
    }
}
