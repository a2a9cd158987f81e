use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}: header mismatch, expected `{expected}`, found `{found}`")]
    HeaderMismatch {
        source_name: String,
        expected: String,
        found: String,
    },
    #[error("{source_name} line {line}: cannot parse field `{field}` from `{value}`")]
    Parse {
        source_name: String,
        line: u64,
        field: String,
        value: String,
    },
    #[error("csv error in {source_name}: {message}")]
    Csv {
        source_name: String,
        message: String,
    },
    #[error("duplicate ({province}, {date}) key in {source_name}")]
    DuplicateKey {
        source_name: String,
        province: String,
        date: chrono::NaiveDate,
    },
    #[error("no provinces qualify")]
    NoProvinces,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::HeaderMismatch { .. } => "header_mismatch",
            Error::Parse { .. } => "parse",
            Error::Csv { .. } => "csv",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::NoProvinces => "no_provinces",
            Error::Empty(_) => "empty",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Singular(_) => "singular",
            Error::Overflow(_) => "overflow",
            Error::UnknownTerm(_) => "unknown_term",
            Error::Config { .. } => "config",
            Error::Serde(_) => "serde",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
