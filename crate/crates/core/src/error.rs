use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence too long: length {len} exceeds limit {max}")]
    Length { len: usize, max: usize },

    #[error("token {token} out of range for vocabulary of size {size}")]
    Token { token: u32, size: usize },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("infeasible task: {0}")]
    Infeasible(String),

    #[error("instance too large to enumerate: {count} sequences (limit {limit})")]
    TooLarge { count: u128, limit: u128 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("dataset format: line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
