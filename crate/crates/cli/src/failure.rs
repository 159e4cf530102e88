use std::fmt;

use ionhop::Error;

/// An error message with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::config(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn code_of(err: &Error) -> u8 {
    match err {
        Error::SolverFailure { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Dataset { source, .. } => code_of(source),
        _ => EXIT_CONFIG,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Self { code: code_of(&err), message: err.to_string() }
    }
}
