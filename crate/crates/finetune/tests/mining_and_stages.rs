//! Mining behavior and the three-stage chain on a miniature corpus.

use lexret_eval::Qrels;
use lexret_finetune::{
    mine_hard_negatives, run_stage, synthetic_teacher_scores, StageConfig, StageInputs,
};
use lexret_model::{HeadLayout, ModelConfig, TransformerWeights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn tiny_weights(seed: u64) -> TransformerWeights {
    let config = ModelConfig {
        vocab_size: 60,
        hidden_size: 16,
        encoder_layers: 2,
        decoder_layers: 1,
        attention_heads: 2,
        max_sequence_length: 12,
        ff_multiplier: 2,
    };
    TransformerWeights::init(config, HeadLayout::TiedDefault, seed)
}

/// Corpus of 24 docs in 4 "topics" (disjoint token ranges), 8 queries.
fn fixture() -> (Vec<(String, Vec<u32>)>, Vec<(String, Vec<u32>)>, Qrels) {
    let mut corpus = Vec::new();
    for topic in 0..4u32 {
        for i in 0..6u32 {
            let base = 5 + topic * 12;
            corpus.push((
                format!("d{topic}_{i}"),
                vec![base, base + 1 + (i % 3), base + 4 + (i % 5), base + 2],
            ));
        }
    }
    let mut queries = Vec::new();
    let mut qrels = Qrels::new();
    for topic in 0..4u32 {
        for j in 0..2u32 {
            let qid = format!("q{topic}_{j}");
            let base = 5 + topic * 12;
            queries.push((qid.clone(), vec![base, base + 1 + (j % 3)]));
            qrels.insert(&qid, &format!("d{topic}_{j}"), 2);
        }
    }
    (corpus, queries, qrels)
}

#[test]
fn mined_pools_never_contain_positives() {
    let (corpus, queries, qrels) = fixture();
    let weights = tiny_weights(5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mined =
        mine_hard_negatives(&weights, &corpus, &queries, &qrels, 10, 3, &mut rng).unwrap();
    for (qid, pool) in &mined.per_query {
        assert_eq!(pool.len(), 3);
        for doc in pool {
            assert_eq!(qrels.grade(qid, doc), 0, "{qid} pool contains positive {doc}");
        }
        let unique: std::collections::BTreeSet<_> = pool.iter().collect();
        assert_eq!(unique.len(), pool.len(), "pool has duplicates");
    }
}

#[test]
fn mining_is_deterministic_for_a_fixed_seed() {
    let (corpus, queries, qrels) = fixture();
    let weights = tiny_weights(6);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        mine_hard_negatives(&weights, &corpus, &queries, &qrels, 8, 3, &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn exhausted_candidates_backfill_from_the_corpus() {
    // Constant-output encoder: every document ties, so retrieval ranks by
    // ascending ordinal and the top-5 are exactly the first five corpus
    // docs. All five are positives, leaving nothing to sample; the pool is
    // backfilled entirely from the remaining non-positive documents.
    let mut weights = tiny_weights(7);
    weights.for_each_param_mut(|name, t| {
        let fill = if name == "enc_head.vocab_bias" { 1.0 } else { 0.0 };
        for v in t.data_mut() {
            *v = fill;
        }
    });

    let corpus: Vec<(String, Vec<u32>)> =
        (0..6).map(|i| (format!("d{i}"), vec![7u32 + i, 8 + i])).collect();
    let queries = vec![("q".to_string(), vec![7u32, 8])];
    let mut qrels = Qrels::new();
    for i in 0..5 {
        qrels.insert("q", &format!("d{i}"), 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mined = mine_hard_negatives(&weights, &corpus, &queries, &qrels, 5, 1, &mut rng).unwrap();
    assert_eq!(mined.per_query["q"], vec!["d5".to_string()]);
    assert_eq!(mined.backfilled, 1);
}

fn stage_cfg(stage: u8) -> StageConfig {
    let base = match stage {
        1 => StageConfig::stage1(),
        2 => StageConfig::stage2(),
        _ => StageConfig::stage3(),
    };
    StageConfig {
        negatives_per_query: 2,
        mining_depth: 10,
        epochs: 1,
        batch_size: 4,
        learning_rate: 3e-4,
        ..base
    }
}

#[test]
fn three_stage_chain_runs_end_to_end() {
    let (corpus, queries, qrels) = fixture();
    let inputs = StageInputs {
        corpus: &corpus,
        train_queries: &queries,
        train_qrels: &qrels,
        eval_queries: &queries,
        eval_qrels: &qrels,
    };
    let mut weights = tiny_weights(8);

    let r1 = run_stage(&mut weights, &inputs, &stage_cfg(1), None, 100).unwrap();
    assert_eq!(r1.stage, 1);
    assert!(r1.steps > 0);
    assert!(r1.records.iter().all(|r| r.loss_total.is_finite()));

    let r2 = run_stage(&mut weights, &inputs, &stage_cfg(2), None, 101).unwrap();
    assert_eq!(r2.stage, 2);

    // Teacher covers (query, candidate) pairs for every corpus doc; the
    // stage only looks up what it needs.
    let corpus_map: BTreeMap<String, Vec<u32>> = corpus.iter().cloned().collect();
    let positives: BTreeMap<String, String> = queries
        .iter()
        .map(|(qid, _)| (qid.clone(), qrels.positives(qid)[0].clone()))
        .collect();
    let candidates: BTreeMap<String, Vec<String>> = queries
        .iter()
        .map(|(qid, _)| (qid.clone(), corpus.iter().map(|(d, _)| d.clone()).collect()))
        .collect();
    let teacher = synthetic_teacher_scores(&corpus_map, &positives, &candidates);

    let r3 = run_stage(&mut weights, &inputs, &stage_cfg(3), Some(&teacher), 102).unwrap();
    assert_eq!(r3.stage, 3);
    assert!(r3.metrics.iter().any(|(name, _)| name == "mrr@10"));
    // Stage 3 logs a real distillation component.
    assert!(r3.records.iter().any(|r| r.loss_distillation > 0.0));
}

#[test]
fn stage3_refuses_to_run_without_a_teacher() {
    let (corpus, queries, qrels) = fixture();
    let inputs = StageInputs {
        corpus: &corpus,
        train_queries: &queries,
        train_qrels: &qrels,
        eval_queries: &queries,
        eval_qrels: &qrels,
    };
    let mut weights = tiny_weights(9);
    assert!(run_stage(&mut weights, &inputs, &stage_cfg(3), None, 103).is_err());
}

#[test]
fn stage_runs_are_deterministic() {
    let (corpus, queries, qrels) = fixture();
    let inputs = StageInputs {
        corpus: &corpus,
        train_queries: &queries,
        train_qrels: &qrels,
        eval_queries: &queries,
        eval_qrels: &qrels,
    };
    let run = || {
        let mut weights = tiny_weights(10);
        let report = run_stage(&mut weights, &inputs, &stage_cfg(1), None, 200).unwrap();
        let losses: Vec<u64> = report.records.iter().map(|r| r.loss_total.to_bits()).collect();
        let mut params = Vec::new();
        weights.for_each_param(|_, t| params.extend(t.data().iter().map(|v| v.to_bits())));
        (losses, params)
    };
    assert_eq!(run(), run());
}
