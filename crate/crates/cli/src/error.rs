use std::fmt;

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// An experiment ran but a check failed.
    Criterion(String),
    /// Arguments or configuration are unusable.
    Usage(String),
    /// File or network failure.
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Criterion(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Criterion(m) | CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

pub type CliResult = Result<(), CliError>;

pub fn io(context: impl fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Io(format!("{context}: {e}"))
}
