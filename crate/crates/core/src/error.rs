use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("degenerate template: {0}")]
    DegenerateTemplate(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("attack iteration aborted: {0}")]
    AbortIteration(String),
    #[error("internal consistency check failed: {0}")]
    Internal(String),
    #[error("training diverged at step {step} (loss {loss})")]
    TrainingFailure { step: usize, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
