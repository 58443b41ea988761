use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Every variant maps to a short machine-readable category (see
/// [`Error::category`]) which the command-line front-end prints before the
/// human-readable message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("score sets are not aligned: {0}")]
    Alignment(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("metric undefined: {0}")]
    Metric(String),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::Unsupported(_) => "unsupported",
            Error::Param(_) => "parameter",
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Internal(_) => "internal",
            Error::Training(_) => "training",
            Error::Data(_) => "data",
            Error::Numeric(_) => "numeric",
            Error::Alignment(_) => "alignment",
            Error::Parse { .. } => "parse",
            Error::Metric(_) => "metric",
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
