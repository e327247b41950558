use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
///
/// `Config` and `MissingInput` are precondition failures that the CLI maps to
/// exit code 2; everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input: {what} (expected at {path})")]
    MissingInput { what: String, path: PathBuf },

    #[error("no subject detected: {0}")]
    NoDetection(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("zero vector passed to cosine")]
    ZeroVector,

    #[error("unparseable caption: {0:?}")]
    Caption(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by the caller's configuration or missing
    /// artifacts rather than by the computation itself.
    pub fn is_precondition(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingInput { .. })
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
