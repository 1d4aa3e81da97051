use thiserror::Error;

/// Top-level command errors, grouped into exit-code categories.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {detail}")]
    Config { detail: String },

    #[error("missing prerequisite: {artifact} not found at {path}; run `lexret {producer}` first")]
    MissingPrerequisite {
        artifact: &'static str,
        path: String,
        producer: &'static str,
    },

    #[error("input format error: {detail}")]
    InputFormat { detail: String },

    #[error("artifact mismatch: {detail}")]
    Mismatch { detail: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] lexret_model::ModelError),

    #[error(transparent)]
    Finetune(#[from] lexret_finetune::FinetuneError),

    #[error(transparent)]
    Index(#[from] lexret_index::IndexError),

    #[error(transparent)]
    IndexStorage(#[from] lexret_index::StorageError),

    #[error(transparent)]
    Checkpoint(#[from] lexret_model::checkpoint::CheckpointError),

    #[error(transparent)]
    VectorFormat(#[from] lexret_sparse::FormatError),

    #[error(transparent)]
    Trec(#[from] lexret_eval::TrecError),

    #[error(transparent)]
    Eval(#[from] lexret_eval::EvalError),
}

impl CliError {
    /// Exit-code category: 2 config, 3 missing prerequisite, 4 bad input
    /// or artifact mismatch, 5 training failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::MissingPrerequisite { .. } => 3,
            CliError::InputFormat { .. }
            | CliError::Mismatch { .. }
            | CliError::VectorFormat(_)
            | CliError::Trec(_)
            | CliError::IndexStorage(_)
            | CliError::Checkpoint(_) => 4,
            CliError::Training(_) => 5,
            CliError::Model(lexret_model::ModelError::TrainingDiverged { .. }) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
