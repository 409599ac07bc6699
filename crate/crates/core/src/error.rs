use thiserror::Error;

use crate::game::ValidationReport;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum CmgError {
    #[error("invalid game specification:\n{0}")]
    Validation(ValidationReport),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("player index {index} out of range for a {players}-player game")]
    PlayerIndex { index: usize, players: usize },
}

pub type Result<T> = std::result::Result<T, CmgError>;

impl From<serde_json::Error> for CmgError {
    fn from(err: serde_json::Error) -> Self {
        CmgError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
