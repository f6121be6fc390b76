//! Error-to-exit-code mapping.

use std::fmt;

use topicpath_core::corpus::CorpusError;
use topicpath_core::idgraph::IdgraphError;
use topicpath_core::metrics::MetricsError;
use topicpath_core::model::ModelError;
use topicpath_core::taxonomy::TaxonomyError;
use topicpath_core::tensor::TensorError;
use topicpath_core::trainer::TrainerError;

/// Process-level failure with its exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: filesystem and serialization failures.
    Io(String),
    /// Exit 2: invalid flags or configuration.
    Usage(String),
    /// Exit 3: incoherent or malformed data.
    Data(String),
    /// Exit 4: numeric failure (gradient check, non-finite loss).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) | CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::ConfigInvalid(_) => CliError::Usage(e.to_string()),
            CorpusError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        match e {
            TaxonomyError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<IdgraphError> for CliError {
    fn from(e: IdgraphError) -> Self {
        match e {
            IdgraphError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ConfigInvalid(_) => CliError::Usage(e.to_string()),
            ModelError::Tensor(TensorError::Checkpoint(_)) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Checkpoint(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::ConfigInvalid(_) => CliError::Usage(e.to_string()),
            TrainerError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainerError::Io(_) => CliError::Io(e.to_string()),
            TrainerError::Model(m) => m.into(),
            TrainerError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
