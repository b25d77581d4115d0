use std::fmt;

use tlc::TlcError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_PROPERTY: u8 = 4;

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn io(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn property(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_PROPERTY,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<TlcError> for CliError {
    fn from(e: TlcError) -> Self {
        let code = match e {
            TlcError::Io(_) => EXIT_IO,
            TlcError::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            error: e.into(),
        }
    }
}
