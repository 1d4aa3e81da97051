use lexret_autodiff::AdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AdError),

    #[error("sequence of length {len} exceeds the maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("attention mask length {mask} does not match sequence length {len}")]
    MaskLengthMismatch { mask: usize, len: usize },

    #[error("decoder input must begin with the [CLS] slot")]
    MissingClsSlot,

    #[error("sequence has no maskable positions")]
    NoMaskablePositions,

    #[error("masking rate requests {requested} positions but only {available} are available")]
    MaskRateExceedsAvailable { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty token sequence")]
    EmptySequence,

    #[error("empty batch")]
    EmptyBatch,

    #[error(
        "training diverged at step {step}: loss_total={total}, loss_elm={elm}, loss_dlm={dlm}, \
         max |param| = {max_param_abs}"
    )]
    TrainingDiverged {
        step: usize,
        total: f64,
        elm: f64,
        dlm: f64,
        max_param_abs: f64,
    },

    #[error("empty corpus: no documents with maskable content")]
    EmptyCorpus,
}

pub type Result<T> = std::result::Result<T, ModelError>;
