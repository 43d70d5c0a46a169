use thiserror::Error;

/// CLI failure; each variant has a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("solver did not converge: {0}")]
    Solver(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Verification(_) => 5,
        }
    }
}

impl From<coxcert::Error> for CliError {
    fn from(e: coxcert::Error) -> Self {
        use coxcert::Error as E;
        match e {
            E::Csv { .. } | E::Io { .. } | E::EmptyDataset | E::NoEvents => CliError::Io(e.to_string()),
            E::Divergence(_) | E::Quadrature { .. } => CliError::Solver(e.to_string()),
            E::InvalidDgp(_) | E::InvalidArgument(_) | E::Assumption(_) => CliError::Config(e.to_string()),
        }
    }
}
