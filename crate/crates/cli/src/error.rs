use std::io;
use std::path::Path;

use thiserror::Error;

use poresurr::fomlite::{CdrError, FlowError, SampleError};
use poresurr::modelselect::SelectError;
use poresurr::pca::PcaError;
use poresurr::pipeline::PipelineError;
use poresurr::voxelgeom::{GenerateError, PvxError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("missing artifact: {0}")]
    Missing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) => 3,
            Self::Missing(_) => 4,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::NotFound => Self::Missing(path.display().to_string()),
            _ => Self::Missing(format!("{}: {e}", path.display())),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Select(SelectError::BadTrainCount { .. })
            | PipelineError::Select(SelectError::EmptyGrid)
            | PipelineError::Pca(PcaError::TooFewSamples { .. })
            | PipelineError::Pca(PcaError::Empty) => Self::Config(e.to_string()),
            PipelineError::Mismatch(_) | PipelineError::Table(_) => Self::Missing(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<PcaError> for CliError {
    fn from(e: PcaError) -> Self {
        match e {
            PcaError::BadMagic | PcaError::UnsupportedVersion(_) | PcaError::Truncated | PcaError::Io(_) => {
                Self::Missing(e.to_string())
            }
            other => PipelineError::from(other).into(),
        }
    }
}

impl From<PvxError> for CliError {
    fn from(e: PvxError) -> Self {
        Self::Missing(e.to_string())
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::ResolutionTooSmall(_) | GenerateError::InvalidConfig(_) => Self::Config(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::Generate(g) => g.into(),
            SampleError::Cdr(CdrError::InvalidParams(m)) => Self::Config(m),
            SampleError::Flow(FlowError::InvalidVelocity) => Self::Config(e.to_string()),
            other => Self::Numeric(other.to_string()),
        }
    }
}
