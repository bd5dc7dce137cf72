use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("malformed {field} in {path}: {detail}")]
    Format {
        path: PathBuf,
        field: String,
        detail: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("training diverged at iteration {iter}; last good checkpoint: {checkpoint:?}")]
    Diverged {
        iter: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        field: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            field: field.into(),
            detail: detail.into(),
        }
    }
}
