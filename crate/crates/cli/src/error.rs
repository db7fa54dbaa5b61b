use seir_consensus::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }
}

/// Exit class of a library error; wrapped trajectory errors take their cause's class.
fn classify(e: &CoreError) -> fn(String) -> CliError {
    match e {
        CoreError::Trajectory { source, .. } => classify(source),
        CoreError::Contract(_) => CliError::Config,
        CoreError::Infeasible { .. } => CliError::Infeasible,
        CoreError::Io(_) | CoreError::Parse(_) | CoreError::Json(_) => CliError::Io,
        CoreError::Integration { .. }
        | CoreError::DegenerateBasis { .. }
        | CoreError::IllPosedFit { .. }
        | CoreError::Stall(_)
        | CoreError::Degenerate(_)
        | CoreError::Numeric(_) => CliError::Numeric,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        classify(&e)(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
