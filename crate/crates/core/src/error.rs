use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants map one-to-one onto the error classes the CLI reports with
/// distinct exit codes (see [`Error::class`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain of the function it was given to.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid user configuration (bad flag values, inconsistent options).
    #[error("config error: {0}")]
    Config(String),

    /// An observation violates the model premise (e.g. out of range).
    #[error("data error{}: {message}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    Data { index: Option<usize>, message: String },

    /// Calibration could not produce a valid set of parameters.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// A numerical routine failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Detector state misuse (e.g. component-count mismatch).
    #[error("state error: {0}")]
    State(String),

    #[error("I/O error: {0}")]
    Io(String),
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Calibration,
    Numeric,
    Io,
}

impl Error {
    pub fn data(message: impl Into<String>) -> Self {
        Error::Data {
            index: None,
            message: message.into(),
        }
    }

    /// Attach a stream position to a data error; other variants pass through.
    pub fn at_index(self, index: usize) -> Self {
        match self {
            Error::Data { message, .. } => Error::Data {
                index: Some(index),
                message,
            },
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::State(_) => ErrorClass::Config,
            Error::Data { .. } => ErrorClass::Data,
            Error::Calibration(_) => ErrorClass::Calibration,
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Io(_) => ErrorClass::Io,
        }
    }
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Calibration => 4,
            ErrorClass::Numeric => 5,
            ErrorClass::Io => 6,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
