use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<tdpp_core::Error> for CliError {
    fn from(e: tdpp_core::Error) -> Self {
        use tdpp_core::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Precondition(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
