use crate::format::FormatError;

/// Command failure, split by exit code: usage errors exit 2, data and
/// runtime errors exit 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Core(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<semitune_core::Error> for CliError {
    fn from(e: semitune_core::Error) -> Self {
        use semitune_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::InvalidTemperature(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
