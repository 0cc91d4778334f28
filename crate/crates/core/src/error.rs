use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (wrong dimensions, empty subset, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A table or enumeration would exceed the configured size cap.
    #[error("capacity exceeded: {what} needs {required} but the cap is {cap}")]
    Capacity {
        what: String,
        required: f64,
        cap: f64,
    },

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Malformed input document.
    #[error("invalid {context}: {message}")]
    Invalid { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn invalid(context: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Invalid {
        context: context.into(),
        message: message.into(),
    }
}
