use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("parameter store mismatch: {0}")]
    StoreMismatch(String),

    #[error("malformed parameter blob: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(NnError::Shape { op, msg: msg.into() })
}
