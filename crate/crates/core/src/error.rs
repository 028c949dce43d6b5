use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown genus `{0}`")]
    UnknownGenus(String),

    #[error("duplicate genus `{0}` in catalog")]
    DuplicateGenus(String),

    #[error("genus catalog is empty")]
    EmptyCatalog,

    #[error("probability vector is empty")]
    EmptyVector,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("genus `{genus}` has {count} macerations, at least 3 are required")]
    TooFewMacerations { genus: String, count: usize },

    #[error("unknown annotation `{0}`")]
    UnknownAnnotation(String),

    #[error("unknown slide `{0}`")]
    UnknownSlide(String),

    #[error("annotation `{id}` is at version {current}, expected {expected}")]
    VersionConflict { id: String, expected: u32, current: u32 },

    #[error("split leakage: {0}")]
    Leakage(String),

    #[error("classifier has not been trained")]
    Untrained,

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short stable identifier, used in machine-parsable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownGenus(_) => "unknown_genus",
            Error::DuplicateGenus(_) => "duplicate_genus",
            Error::EmptyCatalog => "empty_catalog",
            Error::EmptyVector => "empty_vector",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Invalid(_) => "invalid",
            Error::OutOfRange(_) => "out_of_range",
            Error::TooFewMacerations { .. } => "too_few_macerations",
            Error::UnknownAnnotation(_) => "unknown_annotation",
            Error::UnknownSlide(_) => "unknown_slide",
            Error::VersionConflict { .. } => "version_conflict",
            Error::Leakage(_) => "leakage",
            Error::Untrained => "untrained",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
