//! Hard-negative mining: retrieve with the current encoder snapshot,
//! strip every judged positive, sample uniformly from what remains.

use std::collections::BTreeMap;

use lexret_eval::Qrels;
use lexret_model::TransformerWeights;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::retrieval::{build_impact_index, encode_corpus, retrieve};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedNegatives {
    /// Per query, the sampled negative document ids.
    pub per_query: BTreeMap<String, Vec<String>>,
    /// How many pool slots had to be backfilled from random corpus docs
    /// because the retrieved candidates were exhausted by positives.
    pub backfilled: usize,
}

/// Sample `count` items without replacement, order-stable given the rng.
fn sample<T: Clone>(pool: &[T], count: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    debug_assert!(count <= pool.len());
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out
}

/// For each query: retrieve `depth` candidates with the snapshot encoder,
/// remove all judged positives, sample `per_query` negatives uniformly
/// without replacement. Shortfalls are backfilled from random non-positive
/// corpus documents and counted.
pub fn mine_hard_negatives(
    weights: &TransformerWeights,
    corpus: &[(String, Vec<u32>)],
    queries: &[(String, Vec<u32>)],
    qrels: &Qrels,
    depth: usize,
    per_query: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MinedNegatives> {
    let encoded = encode_corpus(weights, corpus)?;
    let (index, table) = build_impact_index(&encoded, None)?;
    let run = retrieve(weights, &index, &table, queries, depth)?;

    let mut per_query_out = BTreeMap::new();
    let mut backfilled = 0usize;
    for (qid, _) in queries {
        let is_positive = |doc: &str| qrels.grade(qid, doc) >= 1;
        let candidates: Vec<String> = run
            .ranking(qid)
            .iter()
            .filter(|d| !is_positive(d))
            .cloned()
            .collect();
        let take = per_query.min(candidates.len());
        let mut chosen = sample(&candidates, take, rng);
        if chosen.len() < per_query {
            let fallback: Vec<String> = corpus
                .iter()
                .map(|(id, _)| id.clone())
                .filter(|id| !is_positive(id) && !chosen.contains(id))
                .collect();
            let need = (per_query - chosen.len()).min(fallback.len());
            backfilled += need;
            chosen.extend(sample(&fallback, need, rng));
        }
        per_query_out.insert(qid.clone(), chosen);
    }
    Ok(MinedNegatives { per_query: per_query_out, backfilled })
}
