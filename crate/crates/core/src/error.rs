use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpaflError>;

#[derive(Debug, Error)]
pub enum SpaflError {
    /// Invalid experiment, model or round configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {message}")]
    Data { message: String, offset: Option<u64> },

    /// A non-finite value was produced or supplied.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Violation of the client/server exchange contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A client had no training samples and was skipped.
    #[error("client {0} has an empty training partition")]
    EmptyPartition(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SpaflError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SpaflError::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        SpaflError::Data {
            message: msg.into(),
            offset: None,
        }
    }

    pub(crate) fn data_at(offset: u64, msg: impl Into<String>) -> Self {
        SpaflError::Data {
            message: format!("{} (at byte offset {offset})", msg.into()),
            offset: Some(offset),
        }
    }
}
