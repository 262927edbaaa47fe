use std::fmt;

/// Errors raised anywhere in the pipeline.
///
/// The variants double as the failure classes the command line maps onto
/// exit codes, so keep them coarse.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl fmt::Display) -> Self {
        Error::Shape(msg.to_string())
    }

    pub(crate) fn arg(msg: impl fmt::Display) -> Self {
        Error::Argument(msg.to_string())
    }

    pub(crate) fn data(msg: impl fmt::Display) -> Self {
        Error::Data(msg.to_string())
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::Data(format!("wav: {other}")),
        }
    }
}
