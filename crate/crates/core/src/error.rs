use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text, with the 1-based line it came from when known.
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// Input that parses but violates a data invariant.
    #[error("{0}")]
    Data(String),

    /// Caller-supplied parameter outside its valid range.
    #[error("{0}")]
    Param(String),

    /// A numeric routine could not produce a finite, well-defined result.
    #[error("{0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Short stable tag for the error category, used by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Data(_) => "data",
            Error::Param(_) => "param",
            Error::Numeric(_) => "numeric",
            Error::Io(_) => "io",
            Error::Json(_) => "schema",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
