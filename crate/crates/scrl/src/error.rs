use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// An API precondition was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// A byte-level format (WAV, PPM, SCRLT, checkpoint, manifest) failed to parse.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure, with the path that was being accessed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss.
    #[error("non-finite loss: {0}")]
    NonFinite(String),

    /// Bad configuration file or flag value.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
