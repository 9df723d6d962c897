use thiserror::Error;

use crate::market::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown agent type theta = {0}")]
    UnknownType(f64),

    #[error("point outside the domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("environment failed validation ({} violation(s))", .0.violations.len())]
    Blocked(ValidationReport),

    #[error("contract not admissible: {0}")]
    Admissibility(String),

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
