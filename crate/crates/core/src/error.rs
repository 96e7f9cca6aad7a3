use std::io;

/// Errors produced anywhere in the picking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("synthetic generation error: {0}")]
    Generation(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("parameter error: {0}")]
    Param(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad input (files, flags, configs) rather
    /// than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Range(_)
                | Error::Param(_)
                | Error::Config(_)
                | Error::Generation(_)
                | Error::Data(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
