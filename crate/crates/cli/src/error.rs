use std::fmt;
use std::path::Path;

/// A failed run. Data errors exit with 1, numerical failures with 2.
#[derive(Debug)]
pub enum CliError {
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fungp::Error> for CliError {
    fn from(e: fungp::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
