use serde::{Deserialize, Serialize};

use crate::error::{FinetuneError, Result};

/// One training unit: a query, its positive document, sampled negatives,
/// and (stage 3) teacher scores aligned to positive-then-negatives.
#[derive(Debug, Clone)]
pub struct QueryGroup {
    pub query_id: String,
    pub query: Vec<u32>,
    pub positive_id: String,
    pub positive: Vec<u32>,
    pub negative_ids: Vec<String>,
    pub negatives: Vec<Vec<u32>>,
    pub teacher_scores: Option<Vec<f64>>,
}

impl QueryGroup {
    pub fn num_candidates(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.negatives.is_empty() {
            return Err(self.invalid("at least one negative is required"));
        }
        if self.negatives.len() != self.negative_ids.len() {
            return Err(self.invalid("negative ids and texts disagree in length"));
        }
        if self.negative_ids.iter().any(|id| *id == self.positive_id) {
            return Err(self.invalid("the positive document appears among the negatives"));
        }
        if let Some(scores) = &self.teacher_scores {
            if scores.len() != self.num_candidates() {
                return Err(self.invalid(format!(
                    "{} teacher scores for {} candidates",
                    scores.len(),
                    self.num_candidates()
                )));
            }
        }
        Ok(())
    }

    fn invalid(&self, detail: impl Into<String>) -> FinetuneError {
        FinetuneError::InvalidGroup { query_id: self.query_id.clone(), detail: detail.into() }
    }
}

/// Per-stage hyperparameters. `lambda` weights the sparsity pressure on
/// both the query and document batches; `query_lambda` optionally splits
/// the query side off with its own weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: u8,
    pub lambda: f64,
    pub query_lambda: Option<f64>,
    pub negatives_per_query: usize,
    pub mining_depth: usize,
    /// Contrastive weight inside the stage-3 loss.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl StageConfig {
    pub fn stage1() -> StageConfig {
        StageConfig {
            stage: 1,
            lambda: 0.002,
            query_lambda: None,
            negatives_per_query: 4,
            mining_depth: 1000,
            gamma: 0.2,
            epochs: 3,
            batch_size: 4,
            learning_rate: 5e-4,
        }
    }

    pub fn stage2() -> StageConfig {
        StageConfig {
            stage: 2,
            lambda: 0.008,
            mining_depth: 200,
            ..StageConfig::stage1()
        }
    }

    pub fn stage3() -> StageConfig {
        StageConfig {
            stage: 3,
            lambda: 0.008,
            mining_depth: 200,
            ..StageConfig::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: &str| {
            Err(FinetuneError::InvalidStage { stage: self.stage, detail: detail.into() })
        };
        if !(1..=3).contains(&self.stage) {
            return fail("stage must be 1, 2 or 3");
        }
        if self.lambda < 0.0 || self.gamma < 0.0 || self.query_lambda.is_some_and(|l| l < 0.0) {
            return fail("loss weights must be non-negative");
        }
        if self.mining_depth < self.negatives_per_query {
            return fail("mining depth must cover the negatives per query");
        }
        if self.negatives_per_query == 0 || self.batch_size == 0 || self.epochs == 0 {
            return fail("negatives, batch size and epochs must be positive");
        }
        if self.learning_rate <= 0.0 {
            return fail("learning rate must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group() -> QueryGroup {
        QueryGroup {
            query_id: "q1".into(),
            query: vec![7],
            positive_id: "d1".into(),
            positive: vec![8],
            negative_ids: vec!["d2".into()],
            negatives: vec![vec![9]],
            teacher_scores: None,
        }
    }

    #[test]
    fn valid_group_passes() {
        group().validate().unwrap();
    }

    #[test]
    fn positive_among_negatives_rejected() {
        let mut g = group();
        g.negative_ids = vec!["d1".into()];
        assert!(g.validate().is_err());
    }

    #[test]
    fn teacher_scores_must_align() {
        let mut g = group();
        g.teacher_scores = Some(vec![1.0]);
        assert!(g.validate().is_err());
        g.teacher_scores = Some(vec![1.0, 0.5]);
        g.validate().unwrap();
    }

    #[test]
    fn stage_defaults_validate() {
        StageConfig::stage1().validate().unwrap();
        StageConfig::stage2().validate().unwrap();
        StageConfig::stage3().validate().unwrap();
    }

    #[test]
    fn depth_must_cover_negatives() {
        let cfg = StageConfig { mining_depth: 2, negatives_per_query: 5, ..StageConfig::stage1() };
        assert!(cfg.validate().is_err());
    }
}
