use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variants map onto the process exit codes used by the CLI:
/// `Config`/`Dimension`/`Data`/`Training` are validation errors (exit 1),
/// `Io`/`Image`/`Checkpoint` are I/O errors (exit 2).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// `map_err` adapter attaching the offending path to an I/O error.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Exit code the CLI reports for this error: 1 validation, 2 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Data(_) | Error::Training(_) => 1,
            Error::Io { .. } | Error::Image(_) | Error::Checkpoint(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
