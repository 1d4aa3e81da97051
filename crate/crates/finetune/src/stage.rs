//! One fine-tuning stage end to end: negative pool construction, epochs of
//! contrastive (or distilled) updates, and a held-out retrieval report.
//! Stages chain: each starts from the weights the previous one produced.

use std::collections::BTreeMap;

use lexret_autodiff::optim::{Adam, AdamConfig};
use lexret_eval::{dpr_recall_at_n, marco_recall_at_n, mrr_at_k, ndcg_at_k, Qrels};
use lexret_index::{Bm25Params, Bm25Stats};
use lexret_model::TransformerWeights;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{FinetuneError, Result};
use crate::group::{QueryGroup, StageConfig};
use crate::loss::{stage_step, StageLossParts};
use crate::mining::mine_hard_negatives;
use crate::retrieval::{build_impact_index, encode_corpus, retrieve};
use crate::teacher::TeacherScores;

pub struct StageInputs<'a> {
    pub corpus: &'a [(String, Vec<u32>)],
    pub train_queries: &'a [(String, Vec<u32>)],
    pub train_qrels: &'a Qrels,
    pub eval_queries: &'a [(String, Vec<u32>)],
    pub eval_qrels: &'a Qrels,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_distillation: f64,
    pub loss_contrastive: f64,
    pub loss_flops: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: u8,
    pub groups: usize,
    pub steps: usize,
    pub backfilled_negatives: usize,
    pub records: Vec<StageRecord>,
    /// Held-out metrics after training: (name, value).
    pub metrics: Vec<(String, f64)>,
    /// Mean non-zero terms per encoded document after training.
    pub mean_doc_nnz: f64,
}

/// The primary positive of a query: highest grade, ties to the smaller id.
fn primary_positive(qrels: &Qrels, qid: &str) -> Option<String> {
    qrels
        .grades(qid)?
        .iter()
        .filter(|(_, g)| **g >= 1)
        .max_by(|(da, ga), (db, gb)| ga.cmp(gb).then(db.cmp(da)))
        .map(|(d, _)| d.clone())
}

fn negative_pool_bm25(
    inputs: &StageInputs,
    cfg: &StageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(BTreeMap<String, Vec<String>>, usize)> {
    let stats = Bm25Stats::build(
        &inputs
            .corpus
            .iter()
            .enumerate()
            .map(|(i, (_, tokens))| (i as u32, tokens.clone()))
            .collect::<Vec<_>>(),
        Bm25Params::default(),
    );
    let names: Vec<&String> = inputs.corpus.iter().map(|(id, _)| id).collect();
    let mut pools = BTreeMap::new();
    let mut backfilled = 0usize;
    let depth = cfg.mining_depth.min(inputs.corpus.len());
    for (qid, tokens) in inputs.train_queries {
        let is_positive = |doc: &str| inputs.train_qrels.grade(qid, doc) >= 1;
        let hits = stats.search(tokens, depth);
        let candidates: Vec<String> = hits
            .iter()
            .map(|h| names[h.doc_id as usize].clone())
            .filter(|d| !is_positive(d))
            .collect();
        let take = cfg.negatives_per_query.min(candidates.len());
        let mut chosen = sample(&candidates, take, rng);
        if chosen.len() < cfg.negatives_per_query {
            let fallback: Vec<String> = names
                .iter()
                .map(|s| s.to_string())
                .filter(|d| !is_positive(d) && !chosen.contains(d))
                .collect();
            let need = (cfg.negatives_per_query - chosen.len()).min(fallback.len());
            backfilled += need;
            chosen.extend(sample(&fallback, need, rng));
        }
        pools.insert(qid.clone(), chosen);
    }
    Ok((pools, backfilled))
}

fn sample<T: Clone>(pool: &[T], count: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(pool.len()) {
        let i = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out
}

fn build_groups(
    inputs: &StageInputs,
    pools: &BTreeMap<String, Vec<String>>,
    teacher: Option<&TeacherScores>,
) -> Result<Vec<QueryGroup>> {
    let by_id: BTreeMap<&str, &Vec<u32>> =
        inputs.corpus.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let mut groups = Vec::new();
    for (qid, qtokens) in inputs.train_queries {
        let Some(positive_id) = primary_positive(inputs.train_qrels, qid) else { continue };
        let Some(positive) = by_id.get(positive_id.as_str()) else { continue };
        let Some(negative_ids) = pools.get(qid) else { continue };
        if negative_ids.is_empty() {
            continue;
        }
        let negatives: Vec<Vec<u32>> = negative_ids
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|t| (*t).clone()))
            .collect();
        if negatives.len() != negative_ids.len() {
            return Err(FinetuneError::InvalidGroup {
                query_id: qid.clone(),
                detail: "negative pool references unknown documents".into(),
            });
        }
        let teacher_scores = match teacher {
            Some(t) => {
                let mut scores = Vec::with_capacity(1 + negative_ids.len());
                scores.push(t.require(qid, &positive_id)?);
                for id in negative_ids {
                    scores.push(t.require(qid, id)?);
                }
                Some(scores)
            }
            None => None,
        };
        let group = QueryGroup {
            query_id: qid.clone(),
            query: qtokens.clone(),
            positive_id,
            positive: (*positive).clone(),
            negative_ids: negative_ids.clone(),
            negatives,
            teacher_scores,
        };
        group.validate()?;
        groups.push(group);
    }
    if groups.is_empty() {
        return Err(FinetuneError::NoTrainableGroups);
    }
    Ok(groups)
}

/// Negative ids per query for this stage: BM25 retrieval for stage 1,
/// snapshot-encoder mining for stages 2 and 3.
pub fn build_negative_pools(
    weights: &TransformerWeights,
    inputs: &StageInputs,
    cfg: &StageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(BTreeMap<String, Vec<String>>, usize)> {
    if cfg.stage == 1 {
        negative_pool_bm25(inputs, cfg, rng)
    } else {
        let mined = mine_hard_negatives(
            weights,
            inputs.corpus,
            inputs.train_queries,
            inputs.train_qrels,
            cfg.mining_depth.min(inputs.corpus.len()),
            cfg.negatives_per_query,
            rng,
        )?;
        Ok((mined.per_query, mined.backfilled))
    }
}

/// Measure held-out retrieval quality of the current weights.
pub fn evaluate_retrieval(
    weights: &TransformerWeights,
    corpus: &[(String, Vec<u32>)],
    queries: &[(String, Vec<u32>)],
    qrels: &Qrels,
    k: usize,
) -> Result<(Vec<(String, f64)>, f64)> {
    let encoded = encode_corpus(weights, corpus)?;
    let mean_nnz =
        encoded.iter().map(|(_, v)| v.nnz() as f64).sum::<f64>() / encoded.len().max(1) as f64;
    let (index, table) = build_impact_index(&encoded, None)?;
    let run = retrieve(weights, &index, &table, queries, k)?;
    let metrics = vec![
        ("mrr@10".to_string(), mrr_at_k(&run, qrels, 10)?),
        ("ndcg@10".to_string(), ndcg_at_k(&run, qrels, 10)?),
        ("marco_recall@50".to_string(), marco_recall_at_n(&run, qrels, 50)?),
        ("dpr_recall@50".to_string(), dpr_recall_at_n(&run, qrels, 50)?),
    ];
    Ok((metrics, mean_nnz))
}

/// Run one full stage: pool construction, training, held-out evaluation.
pub fn run_stage(
    weights: &mut TransformerWeights,
    inputs: &StageInputs,
    cfg: &StageConfig,
    teacher: Option<&TeacherScores>,
    seed: u64,
) -> Result<StageReport> {
    cfg.validate()?;
    if cfg.stage == 3 && teacher.is_none() {
        return Err(FinetuneError::InvalidStage {
            stage: 3,
            detail: "stage 3 requires a teacher score file".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pools, backfilled) = build_negative_pools(weights, inputs, cfg, &mut rng)?;
    let groups = build_groups(inputs, &pools, teacher)?;

    let steps_per_epoch = groups.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut optimizer = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        warmup_steps: total_steps / 10,
        total_steps,
        ..Default::default()
    });

    let mut records = Vec::with_capacity(total_steps);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<QueryGroup> = chunk.iter().map(|&i| groups[i].clone()).collect();
            let parts: StageLossParts = stage_step(weights, &batch, cfg, &mut optimizer)?;
            records.push(StageRecord {
                step,
                loss_total: parts.total,
                loss_distillation: parts.distillation,
                loss_contrastive: parts.contrastive,
                loss_flops: parts.flops,
            });
            step += 1;
        }
    }

    let (metrics, mean_doc_nnz) = evaluate_retrieval(
        weights,
        inputs.corpus,
        inputs.eval_queries,
        inputs.eval_qrels,
        100,
    )?;
    Ok(StageReport {
        stage: cfg.stage,
        groups: groups.len(),
        steps: records.len(),
        backfilled_negatives: backfilled,
        records,
        metrics,
        mean_doc_nnz,
    })
}
