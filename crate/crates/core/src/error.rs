use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Header or record structure is not what the container format expects.
    #[error("format error: {0}")]
    Format(String),

    /// Payload ended early or carries trailing bytes.
    #[error("corrupt tensor file: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A plan or schedule names a tensor that does not exist.
    #[error("unknown tensor `{0}`")]
    Reference(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Format(_)
            | Error::Corruption(_)
            | Error::Validation(_)
            | Error::Shape(_)
            | Error::Reference(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}
