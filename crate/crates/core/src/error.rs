use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numerical error in {stage}: {msg}")]
    Numerical { stage: String, msg: String },
    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Json(_) | Error::Io(_) => 2,
            Error::Dimension(_) | Error::Config(_) | Error::Range(_) => 3,
            Error::Numerical { .. } | Error::Value(_) | Error::Graph(_) => 4,
            Error::Training { .. } => 5,
        }
    }

    /// Re-tag a numerical failure with the pipeline stage it happened in.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Numerical { stage: op, msg } => Error::Numerical {
                stage: format!("{stage} ({op})"),
                msg,
            },
            other => other,
        }
    }
}
