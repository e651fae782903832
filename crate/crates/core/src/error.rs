use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("softmax row {row} has no permitted entries")]
    DegenerateRow { row: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("insufficient data: need {needed} rows, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("cache built for config hash {found:016x}, run expects {expected:016x}")]
    StaleCache { expected: u64, found: u64 },

    #[error("no cache entry for window {index}")]
    CacheMiss { index: usize },

    #[error("malformed file at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::DegenerateRow { .. } => "DegenerateRowError",
            Error::Contract(_) => "ContractError",
            Error::NonFinite(_) => "NonFiniteError",
            Error::Io { .. } => "IoError",
            Error::Parse { .. } => "ParseError",
            Error::InsufficientData { .. } => "InsufficientDataError",
            Error::Length { .. } => "LengthError",
            Error::StaleCache { .. } => "StaleCacheError",
            Error::CacheMiss { .. } => "CacheMissError",
            Error::Format { .. } => "FormatError",
            Error::Config(_) => "ConfigError",
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::StaleCache { .. } => 3,
            Error::CacheMiss { .. } => 4,
            Error::Io { .. } => 5,
            Error::Parse { .. } | Error::Format { .. } => 6,
            Error::Config(_) => 7,
            Error::InsufficientData { .. } => 8,
            Error::NonFinite(_) => 9,
            _ => 1,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
