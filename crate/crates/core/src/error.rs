use thiserror::Error;

pub type Result<T, E = AdrcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AdrcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The closed loop blew up; `time` is the first sample with a bad state.
    #[error("simulation diverged at t = {time:.6} s: {reason}")]
    Unstable { time: f64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown suite `{id}`; valid ids: {valid}")]
    UnknownSuite { id: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AdrcError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AdrcError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AdrcError::Config(msg.into())
    }
}
