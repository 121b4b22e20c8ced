use std::path::PathBuf;

use thiserror::Error;

use crate::train::TrainTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration value was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path} already exists (pass --force to overwrite)")]
    AlreadyExists { path: PathBuf },

    #[error("malformed file at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Box<TrainTrace> },

    #[error("ensemble member with seed {seed} failed: {source}")]
    Member {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure classes, used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_)
            | Error::Config(_)
            | Error::Shape(_)
            | Error::AlreadyExists { .. } => ErrorClass::Config,
            Error::Format { .. }
            | Error::Truncated { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Checksum { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::NonFinite { .. } | Error::Diverged { .. } => ErrorClass::Numerical,
            Error::Member { source, .. } => source.class(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
