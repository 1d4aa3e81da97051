//! Retrieval evaluation over TREC-style qrels and run files.
//!
//! Two recall definitions coexist: the all-positive-macro form divides hits
//! by `min(N, positives)` per query, while the one-positive-enough form is
//! an any-hit indicator. The latter dominates the former pointwise.

mod metrics;
mod trec;

pub use metrics::{
    dpr_recall_at_n, marco_recall_at_n, mrr_at_k, ndcg_at_k, EvalError, Qrels, RunList,
};
pub use trec::{
    parse_qrels, parse_run, read_qrels_file, read_run_file, write_metric_report, write_run_file,
    RunEntry, TrecError,
};
