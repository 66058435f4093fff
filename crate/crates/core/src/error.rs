use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("parse error in {file} at line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("referential integrity: {0}")]
    Integrity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("artifact version mismatch in {path}: expected {expected}, found {found}")]
    Version {
        path: String,
        expected: String,
        found: String,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
