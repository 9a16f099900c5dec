//! Command-line orchestration for the phantom-to-explanation pipeline:
//! dataset generation, stage training, pipeline runs, explanation reports
//! and evaluation curves, with reproducible stamped artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing upstream artifact: {0}")]
    MissingArtifact(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Exit codes: 0 success, 2 config error, 3 missing upstream artifact,
    /// 4 numerical failure; other io failures exit 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<voxrca_core::phantom::PhantomError> for CliError {
    fn from(e: voxrca_core::phantom::PhantomError) -> Self {
        match e {
            voxrca_core::phantom::PhantomError::InvalidSpec(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<voxrca_core::phantom::io::DatasetIoError> for CliError {
    fn from(e: voxrca_core::phantom::io::DatasetIoError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::neuralnet::train::TrainError> for CliError {
    fn from(e: voxrca_core::neuralnet::train::TrainError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::neuralnet::NetError> for CliError {
    fn from(e: voxrca_core::neuralnet::NetError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::pipeline::PipelineError> for CliError {
    fn from(e: voxrca_core::pipeline::PipelineError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::evalx::EvalError> for CliError {
    fn from(e: voxrca_core::evalx::EvalError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::rcax::RcaxError> for CliError {
    fn from(e: voxrca_core::rcax::RcaxError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::concepts::ConceptError> for CliError {
    fn from(e: voxrca_core::concepts::ConceptError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::volgrid::GridError> for CliError {
    fn from(e: voxrca_core::volgrid::GridError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<voxrca_core::neuralnet::io::ModelIoError> for CliError {
    fn from(e: voxrca_core::neuralnet::io::ModelIoError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
