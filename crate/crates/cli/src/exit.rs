//! Errors carrying the process exit code.

use std::fmt;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_MISSING: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn input(msg: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_INPUT,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub fn missing(msg: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_MISSING,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub fn internal(msg: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_INTERNAL,
        error: anyhow::anyhow!("{msg}"),
    }
}
