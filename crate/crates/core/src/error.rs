use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pixel set of size {size} exceeds the enumeration cap {cap} ({bell} partitions)")]
    CapExceeded { size: usize, cap: usize, bell: u128 },

    #[error("undefined layer ratio: residual set {residual:#x} has zero non-empty mass")]
    ZeroMass { residual: u64 },

    #[error("coverage not reached after {draws} leaf draws")]
    DrawCapExceeded { draws: u64 },

    #[error("internal consistency violation: {0}")]
    Internal(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid file contents: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
