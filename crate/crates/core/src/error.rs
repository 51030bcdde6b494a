use std::path::PathBuf;

use thiserror::Error;

use crate::train::TrainingHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed annotation in {path}: {message}")]
    MalformedAnnotation { path: PathBuf, message: String },

    #[error("unknown label '{label}' in {path} (expected 'healthy' or 'stressed')")]
    UnknownLabel { path: PathBuf, label: String },

    #[error("inconsistent dimensions for '{filename}': {first:?} vs {second:?}")]
    InconsistentDimensions {
        filename: String,
        first: (u32, u32),
        second: (u32, u32),
    },

    #[error("failed to read image {path}: {message}")]
    ImageRead { path: PathBuf, message: String },

    #[error("failed to write {path}: {message}")]
    Write { path: PathBuf, message: String },

    #[error("class '{0}' has no patches")]
    EmptyClass(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weights unavailable for backbone '{backbone}': {message}")]
    WeightsUnavailable { backbone: String, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("training diverged at epoch {epoch}: validation loss is not finite")]
    DivergenceDetected {
        epoch: usize,
        history: Box<TrainingHistory>,
    },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("layer not found: {0}")]
    LayerNotFound(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint archive {path}: {message}")]
    Archive { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable identifier used on the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedAnnotation { .. } => "MalformedAnnotation",
            Error::UnknownLabel { .. } => "UnknownLabel",
            Error::InconsistentDimensions { .. } => "InconsistentDimensions",
            Error::ImageRead { .. } => "ImageReadError",
            Error::Write { .. } => "WriteError",
            Error::EmptyClass(_) => "EmptyClass",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::WeightsUnavailable { .. } => "WeightsUnavailable",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::EmptyMatrix => "EmptyMatrix",
            Error::NonFiniteGradient => "NonFiniteGradient",
            Error::LayerNotFound(_) => "LayerNotFound",
            Error::Config(_) => "ConfigError",
            Error::Archive { .. } => "ArchiveError",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::MalformedAnnotation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Write {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
