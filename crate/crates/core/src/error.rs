use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: validation error: {msg}")]
    Validation { line: usize, msg: String },

    #[error("input error: {0}")]
    Input(String),

    /// A non-finite value showed up in the named parameter tensor.
    #[error("numeric error in `{param}`: {msg}")]
    Numeric { param: String, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code for this error class: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Input(_)
            | Error::InsufficientHistory(_)
            | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::Numeric { .. } | Error::Measurement(_) | Error::UndefinedCorrelation(_) => 4,
            Error::Io(_) => 1,
        }
    }
}
