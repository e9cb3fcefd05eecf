use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Schema,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumericCell {
        /// 1-based line number in the file, header included.
        row: usize,
        column: String,
        value: String,
    },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("series of length {len} is too short for zero-phase filtering (need more than {min})")]
    SeriesTooShort { len: usize, min: usize },
    #[error("no input tables")]
    EmptyInput,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("class {0} has fewer than 2 rows")]
    ClassTooSmall(usize),
    #[error("expected {expected} features, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("label {label} out of range 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("inconsistent covers at node {node}: {parent} != {left} + {right}")]
    InconsistentCovers {
        node: usize,
        parent: f64,
        left: f64,
        right: f64,
    },
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("tree uses {0} distinct features; brute force supports at most 12")]
    TooManyFeatures(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidSpec(_)
            | Error::InvalidConfig(_)
            | Error::ClassTooSmall(_)
            | Error::TooManyFeatures(_) => ErrorKind::Config,
            Error::MissingColumn(_)
            | Error::NonNumericCell { .. }
            | Error::EmptyFile
            | Error::EmptyInput
            | Error::FeatureCountMismatch { .. }
            | Error::LabelOutOfRange { .. }
            | Error::LengthMismatch(..)
            | Error::MalformedTree(_)
            | Error::InconsistentCovers { .. }
            | Error::Schema(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Schema,
            Error::SeriesTooShort { .. }
            | Error::EmptyTrainSet
            | Error::EmptyMatrix
            | Error::Numeric(_) => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
        }
    }
}
