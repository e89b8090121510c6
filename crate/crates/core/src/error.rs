use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window length {window} for series of length {len}")]
    InvalidWindow { window: usize, len: usize },

    #[error("insufficient history: need at least {needed} rows, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: u64, msg: String },

    #[error("no data: {0}")]
    NoData(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("feature {0} is degenerate (max == min) and cannot be inverted")]
    NonInvertible(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("no normalization params for ticker {0}")]
    MissingParams(String),

    #[error("no checkpoint found in {0}")]
    NoCheckpoint(PathBuf),

    #[error("incompatible format: {0}")]
    IncompatibleFormat(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown ticker {0}")]
    UnknownTicker(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 usage/config, 2 data, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidSplit(_)
            | Error::IncompatibleFormat(_)
            | Error::Dimension(_)
            | Error::InvalidWindow { .. } => 1,
            Error::Divergence(_) => 3,
            _ => 2,
        }
    }
}
