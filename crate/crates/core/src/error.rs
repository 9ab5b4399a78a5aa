use thiserror::Error;

/// Errors produced by the geopose core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("{op}: shape mismatch: {details}")]
    Shape { op: &'static str, details: String },

    /// An argument violates an operation's precondition.
    #[error("{0}")]
    InvalidArgument(String),

    /// A file did not conform to one of the on-disk formats.
    #[error("format error in {path}: {details}")]
    Format { path: String, details: String },

    /// A run configuration key or value was rejected.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(path: impl Into<String>, details: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            details: details.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
