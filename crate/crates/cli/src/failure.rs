use std::process::ExitCode;

use spt_core::Error;

/// Why a command stopped, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Validation(_) => 3,
            Failure::Numerical(_) => 4,
            Failure::Io(_) => 5,
        })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(v) => Failure::Validation(v),
            Error::Domain(m) | Error::Parse(m) => Failure::Validation(vec![m]),
            Error::Csv(ref c) if !c.is_io_error() => Failure::Validation(vec![e.to_string()]),
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => Failure::Io(e.to_string()),
            Error::UndefinedContrast
            | Error::InconsistentMeasurement(_)
            | Error::InsufficientData(_)
            | Error::NonConvergence(_) => Failure::Numerical(e.to_string()),
        }
    }
}
