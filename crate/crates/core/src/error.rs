use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("wav error in {path}: {msg}")]
    Wav { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by degenerate data rather than I/O or configuration.
    pub fn is_degenerate_data(&self) -> bool {
        matches!(self, Error::MetricUndefined(_))
    }
}
