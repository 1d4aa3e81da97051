//! Contrastive fine-tuning of the pre-trained lexicon encoder over three
//! stages: BM25 negatives, self-mined hard negatives, and hard negatives
//! with reranker-score distillation. Teacher scores are consumed from a
//! file; a synthetic overlap-based teacher stands in for an external
//! cross-encoder.

mod error;
mod group;
mod loss;
mod mining;
pub mod retrieval;
mod stage;
mod teacher;

pub use error::{FinetuneError, Result};
pub use group::{QueryGroup, StageConfig};
pub use loss::{
    batch_loss_grads, batch_loss_value, contrastive_distribution, stage_loss, stage_step,
    StageLossParts,
};
pub use mining::{mine_hard_negatives, MinedNegatives};
pub use stage::{
    build_negative_pools, evaluate_retrieval, run_stage, StageInputs, StageRecord, StageReport,
};
pub use teacher::{
    read_teacher_file, synthetic_teacher_scores, write_teacher_file, TeacherScores,
};
