use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("insufficient classes: need {needed}, have {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("non-finite gradient component")]
    NonFiniteGradient,

    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),

    #[error("could not place {classes} separated anchors in dimension {dim}")]
    AnchorRejectionExhausted { classes: usize, dim: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch in {file}: manifest {expected:#018x}, payload {found:#018x}")]
    ChecksumMismatch {
        file: String,
        expected: u64,
        found: u64,
    },

    #[error("{file}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_)
            | Error::NonPositiveTemperature(_)
            | Error::AnchorRejectionExhausted { .. } => ErrorKind::Config,
            Error::ZeroVector { .. }
            | Error::NonFiniteGradient
            | Error::NonFiniteLoss(_)
            | Error::DimensionMismatch { .. }
            | Error::LabelOutOfRange { .. } => ErrorKind::Numeric,
            Error::InsufficientSamples { .. }
            | Error::InsufficientClasses { .. }
            | Error::InvalidData(_)
            | Error::FormatVersionMismatch { .. }
            | Error::ChecksumMismatch { .. }
            | Error::TruncatedFile { .. }
            | Error::Manifest { .. }
            | Error::Csv(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}
