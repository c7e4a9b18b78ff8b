use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] mcs_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("acceptance check failed: {0}")]
    Check(String),
}

impl CliError {
    /// Process exit status: 1 configuration, 2 solver or i/o, 3 failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) | CliError::Io(_) | CliError::Csv(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}
