use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("container format error: {0}")]
    Format(String),

    #[error("weights do not match the network topology: {0}")]
    Topology(String),

    #[error("dataset error at {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("preprocessing mismatch: image is `{image}`, container expects `{container}`")]
    Preprocessing { image: String, container: String },

    #[error("train/test leakage: test row {0} was seen during fitting")]
    Leakage(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::Error::Format(format!($($arg)*)) };
}
pub(crate) use {arg_err, format_err, shape_err};
