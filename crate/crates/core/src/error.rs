use thiserror::Error;

/// Errors raised by the codecs, the memory model and the experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("address {addr} out of range (limit {limit})")]
    OutOfRange { addr: u64, limit: u64 },
    #[error("line counter exhausted for address {0:#x}; re-key required")]
    CounterExhausted(u64),
    #[error("ECP table exhausted: {needed} faulty cells, capacity {capacity}")]
    EcpExhausted { needed: usize, capacity: usize },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
