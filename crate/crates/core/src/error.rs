use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A shape or configuration does not fit the layer/model it is given to.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// NaN or infinity produced by a forward or backward pass.
    #[error("numeric error: non-finite value in {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("pooling error: {0}")]
    Pooling(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("fold {fold} failed: {reason}")]
    FoldFailed { fold: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
