use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resource budget exceeded: {what} needs {needed} bytes, budget is {budget} bytes")]
    BudgetExceeded {
        what: &'static str,
        needed: u128,
        budget: u64,
    },

    #[error("time {n} is outside the kernel horizon {horizon}")]
    OutOfRange { n: usize, horizon: usize },

    #[error("field does not match the model: {0}")]
    Mismatch(String),

    #[error("beta = 0 makes the noise transform degenerate; use the trivial expansion")]
    ZeroBeta,

    #[error("no canonical coupling schedule in the disorder irrelevant regime")]
    NoSchedule,

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("empty input")]
    EmptyInput,

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
