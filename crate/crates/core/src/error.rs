use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Switch contrast is undefined because the no-gate reference is zero.
    #[error("undefined contrast: no-gate reference transmission is zero")]
    UndefinedContrast,

    /// Measured quantities are mutually inconsistent (e.g. a clearly negative
    /// stored-photon estimate).
    #[error("inconsistent measurement: {0}")]
    InconsistentMeasurement(String),

    /// One or more configuration invariants are violated. Every violation is
    /// listed.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    /// Too little data for the requested statistic or fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A numerical routine failed to converge.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
