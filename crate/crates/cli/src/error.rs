use std::fmt;

/// Failure of a CLI run, classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent configuration. Exit 2.
    Config(String),
    /// The computation ran into a mathematical obstruction (divergence,
    /// no computable bound, failed verification). Exit 1.
    Domain(String),
    /// Writing artifacts failed. Exit 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Domain(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Domain(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gwtk::Error> for CliError {
    fn from(e: gwtk::Error) -> Self {
        use gwtk::Error::*;
        match e {
            InvalidMatrix(_) | DimensionMismatch { .. } | InvalidArgument(_) | GridMismatch(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Domain(other.to_string()),
        }
    }
}
