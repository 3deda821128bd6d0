use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A trajectory that the behaviour distribution cannot produce.
    #[error("unsupported sample: {0}")]
    UnsupportedSample(String),

    #[error("enumeration budget exceeded: {required} sequences required, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
