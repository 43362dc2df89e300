use thiserror::Error;

use crate::grid::CellCube;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("hypothesis error: {0}")]
    Hypothesis(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("structural error in part {part:?}: {msg} (offending cube {cube:?})")]
    Structural {
        msg: String,
        part: Option<usize>,
        cube: Option<CellCube>,
    },
    #[error("certificate failure: {0}")]
    Certificate(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
