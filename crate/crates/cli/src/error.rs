use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] teletail::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        use teletail::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Argument(_)) => 2,
            CliError::Core(E::Numeric(_) | E::Degenerate(_) | E::Domain(_)) => 4,
            CliError::Checkpoint(_) | CliError::Core(_) | CliError::Io(_) | CliError::Json(_) => 3,
        }
    }
}
