use thiserror::Error;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error(transparent)]
    Model(#[from] lexret_model::ModelError),

    #[error(transparent)]
    Autodiff(#[from] lexret_autodiff::AdError),

    #[error(transparent)]
    Index(#[from] lexret_index::IndexError),

    #[error(transparent)]
    Eval(#[from] lexret_eval::EvalError),

    #[error("invalid query group {query_id:?}: {detail}")]
    InvalidGroup { query_id: String, detail: String },

    #[error("stage {stage} configuration invalid: {detail}")]
    InvalidStage { stage: u8, detail: String },

    #[error("stage 3 requires teacher scores, none provided for query {query_id:?} doc {doc_id:?}")]
    MissingTeacherScore { query_id: String, doc_id: String },

    #[error("teacher file {path}:{line}: {detail}")]
    TeacherFormat {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("no trainable query groups (no judged queries with positives in the corpus)")]
    NoTrainableGroups,
}

pub type Result<T> = std::result::Result<T, FinetuneError>;
