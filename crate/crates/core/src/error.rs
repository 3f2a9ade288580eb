use thiserror::Error;

/// Errors produced by the adapter library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column {col} of B has zero norm; cosine similarity is undefined")]
    ZeroNormColumn { col: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("incompatible adapters: {0}")]
    Incompatible(String),

    #[error("accuracy matrix incomplete: {0}")]
    IncompleteMatrix(String),

    #[error("trace does not match adapter state: {0}")]
    TraceMismatch(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
