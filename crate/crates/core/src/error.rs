use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad or inconsistent configuration (dimension mismatch, unknown model, missing key).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("budget exhausted: {0}")]
    Budget(String),

    /// Transport-level failure talking to a model endpoint.
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },

    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },

    /// The evaluation backend cannot be reached at all. Fatal for a run.
    #[error("evaluation backend unavailable: {0}")]
    Backend(String),

    /// The run cannot continue (for example, no seed could be produced).
    #[error("run failed: {0}")]
    Fatal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport { retryable, .. } => *retryable,
            Error::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
