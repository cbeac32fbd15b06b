use stepvis::annotation::ServiceError;
use stepvis::context::DecodeError;
use stepvis::diffusion::DiffusionError;
use stepvis::evaluation::EvalError;
use stepvis::generator::GenerateError;
use thiserror::Error;

/// Command failure, mapped onto the process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("adapter failure: {0}")]
    Adapter(String),
    #[error("data: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Config(_) => 3,
            Self::Adapter(_) => 4,
            Self::Data(_) => 5,
        }
    }

    pub fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        Self::Data(format!("{context}: {err}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        match &e {
            e if e.is_adapter_failure() => Self::Adapter(e.to_string()),
            GenerateError::Config(_) | GenerateError::Plan { source: stepvis::planner::PlanError::Config(_), .. } => {
                Self::Config(e.to_string())
            }
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Adapter(_) => Self::Adapter(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Adapter(_) | EvalError::Diffusion(DiffusionError::Adapter(_)) => Self::Adapter(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        Self::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
