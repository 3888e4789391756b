use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate relation type id `{0}`")]
    DuplicateId(String),

    #[error("store format error: {0}")]
    Format(String),

    #[error("record `{0}` not found")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid span: {0}")]
    Span(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("side information error: {0}")]
    SideInfo(String),

    #[error("query error: {0}")]
    Query(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
