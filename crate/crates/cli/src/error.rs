use std::fmt;

use tplab::dataset::DatasetError;
use tplab::eval::EvalError;
use tplab::ingest::IngestError;
use tplab::model::ModelError;
use tplab::train::TrainError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const INTERNAL: u8 = 3;
    /// Finished, but produced nothing (empty extraction or plot selection).
    pub const WARNING: u8 = 4;
    /// Stopped by Ctrl-C after writing a checkpoint.
    pub const INTERRUPTED: u8 = 130;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: exit::USAGE, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { code: exit::DATA, msg: msg.into() }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self { code: exit::INTERNAL, msg: msg.into() }
    }

    /// Prefixes the message, keeping the code.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { code: self.code, msg: format!("{what}: {}", self.msg) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Config(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ShapeChain { .. } | ModelError::Autodiff(_) => Self::internal(e.to_string()),
            ModelError::VariantMismatch { .. } => Self::usage(e.to_string()),
            ModelError::Input(_) | ModelError::Format(_) => Self::data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) | TrainError::VariantMismatch { .. } => Self::usage(e.to_string()),
            TrainError::EmptyTrainSet | TrainError::Checkpoint(_) => Self::data(e.to_string()),
            TrainError::Optimizer(_) | TrainError::Diverged(_) => Self::internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::PredictionLength { .. } => Self::internal(e.to_string()),
            EvalError::EmptyTestSet | EvalError::TooFewReports(_) => Self::data(e.to_string()),
        }
    }
}
