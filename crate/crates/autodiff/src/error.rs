use thiserror::Error;

/// Errors raised while building or differentiating a computation graph.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("max_pool: every position along the pooled axis is masked out")]
    EmptyPool,

    #[error("l1_normalize: input sums to {sum}, cannot form a distribution")]
    DegenerateNormalization { sum: f64 },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("tensor id {0} does not belong to this tape")]
    UnknownTensor(usize),
}

pub type Result<T> = std::result::Result<T, AdError>;
