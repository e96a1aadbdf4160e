use thiserror::Error;
use vfs_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("infeasible generator spec: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {detail}")]
    Training { step: u64, detail: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Errors caused by numerics rather than by inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Training { .. } | Error::Tensor(TensorError::Numeric(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
