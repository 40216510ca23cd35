use std::process::ExitCode;

use massweight::oracle::OracleError;
use massweight::synthetic::SyntheticError;
use massweight::{EstimatorError, SolveError, TableError};
use thiserror::Error;

/// Failures of a command, grouped by exit status: 2 for unusable input or
/// parameters, 3 for records that contradict each other, 4 for a failed
/// verification, 1 for anything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Consistency(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Input(_) => 2,
            CliError::Consistency(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Runtime(_) => 1,
        })
    }

    pub fn input(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{context}: {err}"))
    }

    /// Prefixes the message with the path it concerns, keeping the exit status.
    pub fn with_context(self, path: &std::path::Path) -> Self {
        let prefix = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Input(m) => CliError::Input(prefix(m)),
            CliError::Consistency(m) => CliError::Consistency(prefix(m)),
            CliError::Verification(m) => CliError::Verification(prefix(m)),
            CliError::Runtime(m) => CliError::Runtime(prefix(m)),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        if e.is_consistency() {
            CliError::Consistency(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Domain(_) => CliError::Input(e.to_string()),
            SolveError::NoConvergence { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::TooLarge { .. }
            | OracleError::InvalidDomain(_)
            | OracleError::InvalidOptions(_) => CliError::Input(e.to_string()),
            OracleError::Solve(e) => e.into(),
            OracleError::Table(e) => e.into(),
            OracleError::Estimator(e) => e.into(),
            OracleError::Io(e) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
