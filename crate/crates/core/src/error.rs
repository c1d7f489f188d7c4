use thiserror::Error;

/// Errors produced by scheme construction, bound evaluation and experiments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("instance needs {needed} bits of table entropy, budget is {limit}")]
    Budget { needed: u64, limit: u64 },
    #[error("value function is not mean-zero for key {key:#x} (row sum {sum})")]
    NotMeanZero { key: u64, sum: f64 },
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

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
