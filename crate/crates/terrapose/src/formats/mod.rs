//! Readers and writers for every file the command line consumes or emits.
//!
//! Angles are degrees in every file and radians in memory; the conversion
//! happens here and nowhere else.

pub mod asc;
pub mod bands;
pub mod docs;
pub mod pnm;
pub mod pose;
pub mod tables;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: missing header key `{key}`")]
    MissingHeaderKey { line: usize, key: &'static str },
    #[error("line {line}: {detail}")]
    NonRectangularBody { line: usize, detail: String },
    #[error("line {line}: cannot parse `{token}` as a number")]
    UnparsableNumber { line: usize, token: String },
    #[error("line {line}: {detail}")]
    InvalidTable { line: usize, detail: String },
    #[error("{0}")]
    InvalidImage(String),
    #[error("{0}")]
    InvalidJson(String),
    #[error("{0}")]
    InvalidValue(String),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "FileNotFound"
            }
            FormatError::Io { .. } => "Io",
            FormatError::MissingHeaderKey { .. } => "MissingHeaderKey",
            FormatError::NonRectangularBody { .. } => "NonRectangularBody",
            FormatError::UnparsableNumber { .. } => "UnparsableNumber",
            FormatError::InvalidTable { .. } => "InvalidTable",
            FormatError::InvalidImage(_) => "InvalidImage",
            FormatError::InvalidJson(_) => "InvalidJson",
            FormatError::InvalidValue(_) => "InvalidValue",
        }
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_json<T: serde::de::DeserializeOwned>(
    text: &str,
    what: &str,
) -> Result<T, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::InvalidJson(format!("{what}: {e}")))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable document");
    out.push(b'\n');
    out
}
