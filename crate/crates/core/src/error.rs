use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: String,
        got: String,
        context: &'static str,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("storage error: {0}")]
    Storage(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Storage(format!("serialization failed: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString, context: &'static str) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
            context,
        }
    }
}
