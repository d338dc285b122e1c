use hlm::data::DataError;
use hlm::diagnostics::DiagnosticsError;
use hlm::estimator::{FitError, SpecError};
use hlm::plausible::PoolError;
use hlm::recode::{CodebookError, RecodeError};
use hlm::simulator::SimError;

pub const EXIT_CODEBOOK: u8 = 2;
pub const EXIT_UNMAPPED: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;
pub const EXIT_INPUT: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<CodebookError> for CliError {
    fn from(e: CodebookError) -> Self {
        Self {
            code: EXIT_CODEBOOK,
            message: e.to_string(),
        }
    }
}

impl From<RecodeError> for CliError {
    fn from(e: RecodeError) -> Self {
        let code = match e {
            RecodeError::Unmapped { .. } => EXIT_UNMAPPED,
            RecodeError::InvalidLocationScore { .. } => EXIT_CODEBOOK,
            RecodeError::Data(_) => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        let code = match e {
            FitError::NotConverged { .. } | FitError::NumericalFailure(_) => EXIT_NOT_CONVERGED,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PoolError> for CliError {
    fn from(e: PoolError) -> Self {
        let code = match &e {
            PoolError::Fit { source, .. } => CliError::from(source.clone()).code,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        Self::input(e.to_string())
    }
}
