use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid penalty parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNormVector,

    #[error("embedding row {index} has zero L2 norm")]
    ZeroNormRow { index: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("record {line}: missing field {field:?}")]
    MissingField { line: usize, field: &'static str },

    #[error("count mismatch: {embeddings} embedding rows but {labels} label records")]
    CountMismatch { embeddings: usize, labels: usize },

    #[error("dataset has a single class; at least two distinct labels are required")]
    SingleClassDataset,

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid k percent {0}: must lie in [0, 100]")]
    InvalidK(f64),

    #[error("dataset fingerprint mismatch: manifest {expected}, dataset {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    #[error("projection needs at least 2 embedding dimensions, got {0}")]
    ProjectionDimension(usize),

    #[error("class {0:?} has no training samples")]
    EmptyClass(String),

    #[error("length mismatch: {predicted} predictions for {actual} labels")]
    LengthMismatch { predicted: usize, actual: usize },

    #[error("noise mask is degenerate (all samples flipped or none flipped)")]
    DegenerateMask,

    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),

    #[error("unknown sample {0:?}")]
    UnknownSample(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => e.is_io_error(),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
