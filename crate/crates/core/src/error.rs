use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("record {image_id}: {message}")]
    Applicability { image_id: String, message: String },

    #[error("invalid value for `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("image error: {0}")]
    Image(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("need at least 3 patients to split, got {0}")]
    TooFewPatients(usize),

    #[error("no labelled records for task {0}")]
    NoLabels(String),

    #[error("embedding row {0} has zero norm")]
    ZeroNorm(usize),

    #[error("embedding dimension {0} has zero variance across the batch")]
    DegenerateDimension(usize),

    #[error("non-finite loss in {context} at batch {batch}")]
    NonFinite { context: String, batch: usize },

    #[error("metric needs both classes present")]
    SingleClass,

    #[error("geometric mean needs strictly positive inputs, got {0}")]
    NonPositive(f64),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("no model available for task {0}")]
    MissingModel(String),

    #[error("report cell missing: {0}")]
    MissingCell(String),

    #[error("{0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
