use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("controller failure: {0}")]
    Controller(String),

    #[error(transparent)]
    Core(#[from] gpmpc_core::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Controller(_) => 4,
            CliError::Core(gpmpc_core::Error::Infeasible { .. }) => 4,
            CliError::Core(_) | CliError::Other(_) => 1,
        }
    }
}
