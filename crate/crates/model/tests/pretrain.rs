//! Pre-training contracts: the lexicon-importance distribution, the
//! bag-of-words bottleneck, the joint loss, and the gradient cut through
//! the bottleneck weighting edge.

use lexret_autodiff::{gradcheck, Tape};
use lexret_model::masking::{MaskedSample, MaskingStrategy};
use lexret_model::pretrain::{
    cbow_bottleneck, lexicon_importance, pretrain, pretrain_loss_graph, BottleneckVariant,
    ImportanceNorm, PretrainConfig,
};
use lexret_model::transformer::TapedWeights;
use lexret_model::vocab::{CLS_ID, SEP_ID};
use lexret_model::{HeadLayout, ModelConfig, ModelError, TransformerWeights};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        hidden_size: 16,
        encoder_layers: 2,
        decoder_layers: 1,
        attention_heads: 2,
        max_sequence_length: 12,
        ff_multiplier: 2,
    }
}

fn tiny_weights(seed: u64) -> TransformerWeights {
    TransformerWeights::init(tiny_config(), HeadLayout::TiedDefault, seed)
}

fn sequence(content: &[u32]) -> Vec<u32> {
    let mut s = vec![CLS_ID];
    s.extend_from_slice(content);
    s.push(SEP_ID);
    s
}

fn sample_batch(seed: u64, alpha: f64, beta: f64) -> Vec<MaskedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        MaskedSample::generate(&sequence(&[7, 8, 9, 10, 11, 12]), alpha, beta, MaskingStrategy::Inclusive, 50, &mut rng).unwrap(),
        MaskedSample::generate(&sequence(&[20, 21, 22, 23, 24]), alpha, beta, MaskingStrategy::Inclusive, 50, &mut rng).unwrap(),
    ]
}

// Independent reference for the importance distribution: plain loops over
// a dense logits array, no tape involved.
fn reference_importance(
    logits: &[f64],
    rows: usize,
    cols: usize,
    included: &[usize],
    saturated: bool,
) -> Vec<f64> {
    assert_eq!(logits.len(), rows * cols);
    let mut pooled = vec![f64::NEG_INFINITY; cols];
    for &r in included {
        for c in 0..cols {
            pooled[c] = pooled[c].max(logits[r * cols + c]);
        }
    }
    if saturated {
        let mut v: Vec<f64> = pooled.iter().map(|&x| (1.0 + x.max(0.0)).ln()).collect();
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= sum);
        v
    } else {
        let max = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = pooled.iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / sum).collect()
    }
}

#[test]
fn uniform_logits_give_uniform_importance() {
    let mut tape = Tape::new();
    let logits = tape.constant(vec![1, 4], vec![2.5; 4]);
    let a = lexicon_importance(&mut tape, logits, &[0], ImportanceNorm::Softmax).unwrap();
    for &p in tape.value(a) {
        assert!((p - 0.25).abs() < 1e-15);
    }
}

#[test]
fn pooled_log_ratio_softmax() {
    let mut tape = Tape::new();
    let logits = tape.constant(vec![1, 2], vec![0.0, 2.0f64.ln()]);
    let a = lexicon_importance(&mut tape, logits, &[0], ImportanceNorm::Softmax).unwrap();
    assert!((tape.value(a)[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((tape.value(a)[1] - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn importance_matches_reference_for_both_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, cols) = (8usize, 5usize);
    let logits: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    let included = vec![0usize, 2, 3, 5, 7];
    for (norm, saturated) in [(ImportanceNorm::Softmax, false), (ImportanceNorm::SaturatedL1, true)] {
        let mut tape = Tape::new();
        let l = tape.constant(vec![rows, cols], logits.clone());
        let a = lexicon_importance(&mut tape, l, &included, norm).unwrap();
        let expect = reference_importance(&logits, rows, cols, &included, saturated);
        for (got, want) in tape.value(a).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn importance_sums_to_one_for_random_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let rows = rng.random_range(1..6usize);
        let cols = rng.random_range(2..12usize);
        let logits: Vec<f64> =
            (0..rows * cols).map(|_| rng.random_range(-500.0..500.0)).collect();
        let included: Vec<usize> = (0..rows).collect();
        for norm in [ImportanceNorm::Softmax, ImportanceNorm::SaturatedL1] {
            let mut tape = Tape::new();
            let l = tape.constant(vec![rows, cols], logits.clone());
            match lexicon_importance(&mut tape, l, &included, norm) {
                Ok(a) => {
                    let sum: f64 = tape.value(a).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
                }
                // Saturated norm has no distribution when nothing pools positive.
                Err(ModelError::Autodiff(_)) => assert_eq!(norm, ImportanceNorm::SaturatedL1),
                Err(other) => panic!("unexpected error {other}"),
            }
        }
    }
}

#[test]
fn one_hot_importance_selects_the_embedding_row() {
    let mut tape = Tape::new();
    let table = tape.constant(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let a = tape.constant(vec![3], vec![0.0, 1.0, 0.0]);
    let b = cbow_bottleneck(&mut tape, a, table, false).unwrap();
    assert_eq!(tape.value(b), &[3.0, 4.0]);
}

#[test]
fn uniform_two_word_importance_is_the_midpoint() {
    let mut tape = Tape::new();
    let table = tape.constant(vec![2, 2], vec![1.0, 2.0, 5.0, 8.0]);
    let a = tape.constant(vec![2], vec![0.5, 0.5]);
    let b = cbow_bottleneck(&mut tape, a, table, false).unwrap();
    assert_eq!(tape.value(b), &[3.0, 5.0]);
}

#[test]
fn bottleneck_matches_reference_matvec() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (v, d) = (20usize, 6usize);
    let table: Vec<f64> = (0..v * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a: Vec<f64> = (0..v).map(|_| rng.random_range(0.0..1.0)).collect();
    let sum: f64 = a.iter().sum();
    a.iter_mut().for_each(|x| *x /= sum);

    let mut expect = vec![0.0; d];
    for i in 0..v {
        for j in 0..d {
            expect[j] += table[i * d + j] * a[i];
        }
    }

    let mut tape = Tape::new();
    let tid = tape.constant(vec![v, d], table);
    let aid = tape.constant(vec![v], a);
    let b = cbow_bottleneck(&mut tape, aid, tid, false).unwrap();
    for (got, want) in tape.value(b).iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn detached_decoder_reduces_total_to_encoder_loss() {
    // Disabled bottleneck and an empty decoder mask: the decoder term is a
    // constant zero, so total == encoder loss exactly.
    let weights = tiny_weights(20);
    let tokens = sequence(&[7, 8, 9, 10]);
    let sample = MaskedSample {
        enc_tokens: {
            let mut t = tokens.clone();
            t[1] = 3; // [MASK]
            t
        },
        dec_tokens: tokens.clone(),
        enc_mask: vec![1],
        dec_mask: vec![],
        enc_modes: vec![lexret_model::masking::MaskMode::Mask],
        tokens,
    };
    let cfg = PretrainConfig {
        bottleneck: BottleneckVariant::Disabled,
        ..Default::default()
    };
    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, &weights);
    let graph = pretrain_loss_graph(&mut tape, &tw, &[sample], &cfg).unwrap();
    assert_eq!(tape.scalar(graph.dlm), 0.0);
    assert_eq!(tape.scalar(graph.total), tape.scalar(graph.elm));
}

#[test]
fn loss_decomposes_additively() {
    let weights = tiny_weights(21);
    let batch = sample_batch(3, 0.3, 0.2);
    for variant in [
        BottleneckVariant::SoftmaxCbow,
        BottleneckVariant::SaturatedCbow,
        BottleneckVariant::DenseCls,
        BottleneckVariant::Disabled,
    ] {
        let cfg = PretrainConfig { bottleneck: variant, ..Default::default() };
        let mut tape = Tape::new();
        let tw = TapedWeights::register(&mut tape, &weights);
        let graph = pretrain_loss_graph(&mut tape, &tw, &batch, &cfg).unwrap();
        let (total, elm, dlm) =
            (tape.scalar(graph.total), tape.scalar(graph.elm), tape.scalar(graph.dlm));
        assert!(elm > 0.0 && dlm > 0.0);
        assert!(
            (total - elm - dlm).abs() <= 4.0 * f64::EPSILON * total.abs(),
            "decomposition violated: {total} vs {elm} + {dlm}"
        );
    }
}

fn loss_of(weights: &TransformerWeights, batch: &[MaskedSample], cfg: &PretrainConfig) -> f64 {
    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, weights);
    let graph = pretrain_loss_graph(&mut tape, &tw, batch, cfg).unwrap();
    tape.scalar(graph.total)
}

fn grads_of(
    weights: &TransformerWeights,
    batch: &[MaskedSample],
    cfg: &PretrainConfig,
) -> std::collections::BTreeMap<String, Vec<f64>> {
    let mut w = weights.clone();
    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, &w);
    let graph = pretrain_loss_graph(&mut tape, &tw, batch, cfg).unwrap();
    tape.backward(graph.total).unwrap();
    tw.write_grads(&tape, &mut w);
    let mut out = std::collections::BTreeMap::new();
    w.for_each_param(|name, t| {
        out.insert(name.to_string(), t.grad.clone().unwrap_or_else(|| vec![0.0; t.numel()]));
    });
    out
}

#[test]
fn joint_loss_gradients_match_finite_differences_on_selected_params() {
    // Full-parameter sweeps live in the acceptance suite; here a spread of
    // representative tensors keeps the unit run fast.
    let weights = tiny_weights(22);
    let batch = sample_batch(4, 0.3, 0.2);
    let cfg = PretrainConfig::default();
    let grads = grads_of(&weights, &batch, &cfg);

    for name in [
        "word_embedding",
        "position_embedding",
        "enc.0.wq",
        "enc.1.ff1_w",
        "dec.0.wv",
        "enc_head.transform_w",
        "enc_head.vocab_bias",
        "dec_head.norm.scale",
        "enc_embed_norm.shift",
    ] {
        let mut probe = weights.clone();
        let mut base = Vec::new();
        probe.for_each_param(|n, t| {
            if n == name {
                base = t.data().to_vec();
            }
        });
        let analytic = grads[name].clone();
        let err = gradcheck::max_relative_error(&base, &analytic, 1e-5, |vals| {
            probe.for_each_param_mut(|n, t| {
                if n == name {
                    t.data_mut().copy_from_slice(vals);
                }
            });
            loss_of(&probe, &batch, &cfg)
        });
        assert!(err < 1e-4, "{name}: rel err {err}");
    }
}

#[test]
fn bottleneck_weighting_edge_carries_no_gradient_by_default() {
    // Frozen-copy oracle: gradients with the in-graph cut must equal
    // gradients where the weighting edge reads an external constant copy of
    // the embedding matrix, bit for bit. The ablation flag breaks equality.
    let weights = tiny_weights(23);
    let batch = sample_batch(5, 0.3, 0.2);

    let cut = PretrainConfig::default();
    let through = PretrainConfig { embedding_grad_through_bottleneck: true, ..cut };

    let g_cut = grads_of(&weights, &batch, &cut);
    let g_cut_replay = grads_of(&weights, &batch, &cut);
    let g_through = grads_of(&weights, &batch, &through);

    // Determinism first: the comparison below is only meaningful bit-wise.
    assert_eq!(g_cut, g_cut_replay);

    // The frozen-copy oracle comes from running the ablation graph with a
    // *constant* embedding table in the weighting edge: gradient-wise that
    // is exactly the cut graph, so equality must be bit-level.
    let oracle = grads_of_with_frozen_copy(&weights, &batch);
    assert_eq!(g_cut["word_embedding"], oracle, "cut edge must equal the frozen-copy oracle");

    // Ablation: allowing gradient through the weighting produces a genuinely
    // different embedding gradient, and leaves every other tensor unchanged
    // in this deterministic setup only where no path through the bottleneck
    // weighting exists.
    assert_ne!(g_cut["word_embedding"], g_through["word_embedding"]);

    // Other parameters still receive gradients through lookup/head edges.
    assert!(g_cut["enc_head.transform_w"].iter().any(|&g| g != 0.0));
    assert!(g_cut["word_embedding"].iter().any(|&g| g != 0.0));
}

/// Build the pre-training loss where the bottleneck weighting reads a
/// constant copy of the embedding matrix (a leaf that is not the tied
/// parameter), then return the embedding gradient.
fn grads_of_with_frozen_copy(weights: &TransformerWeights, batch: &[MaskedSample]) -> Vec<f64> {
    use lexret_model::pretrain::{lexicon_importance, pooling_positions};
    use lexret_model::transformer::{decode_with_prefix, encode, lm_logits};

    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, weights);
    let frozen_table = tape.constant(
        weights.word_embedding.shape().to_vec(),
        weights.word_embedding.data().to_vec(),
    );

    let mut elm_terms = Vec::new();
    let mut dlm_terms = Vec::new();
    for sample in batch {
        let n = sample.tokens.len();
        let all = vec![true; n];
        let targets: Vec<usize> = sample.tokens.iter().map(|&t| t as usize).collect();
        let hidden = encode(&mut tape, &tw, &sample.enc_tokens, &all, None).unwrap();
        let logits = lm_logits(&mut tape, &tw, &tw.enc_head, hidden).unwrap();
        elm_terms.push(tape.masked_cross_entropy(logits, &targets, &sample.enc_mask).unwrap());

        let included = pooling_positions(&sample.tokens);
        let a = lexicon_importance(&mut tape, logits, &included, ImportanceNorm::Softmax).unwrap();
        let a_row = tape.reshape(a, vec![1, weights.config.vocab_size]).unwrap();
        let prefix = tape.matmul(a_row, frozen_table).unwrap();
        let dec = decode_with_prefix(&mut tape, &tw, prefix, &sample.dec_tokens, &all, None).unwrap();
        dlm_terms.push(tape.masked_cross_entropy(dec, &targets, &sample.dec_mask).unwrap());
    }
    let mut acc = elm_terms[0];
    for &t in elm_terms.iter().skip(1).chain(dlm_terms.iter()) {
        acc = tape.add(acc, t).unwrap();
    }
    let total = tape.scale(acc, 1.0 / batch.len() as f64);
    tape.backward(total).unwrap();
    tape.grad(tw.word_embedding).unwrap().to_vec()
}

#[test]
fn seeded_pretraining_is_reproducible() {
    let corpus: Vec<Vec<u32>> = (0..12)
        .map(|i| sequence(&[5 + i, 6 + i, 7 + i, 8 + i]))
        .collect();
    let cfg = PretrainConfig {
        steps: 6,
        batch_size: 3,
        learning_rate: 5e-4,
        ..Default::default()
    };
    let run = || {
        let mut w = tiny_weights(30);
        let records = pretrain(&mut w, &corpus, &cfg, 77, |_| {}).unwrap();
        let mut tail = Vec::new();
        w.for_each_param(|_, t| tail.extend(t.data().iter().map(|v| v.to_bits())));
        (
            records.iter().map(|r| r.loss_total.to_bits()).collect::<Vec<_>>(),
            tail,
        )
    };
    let (losses_a, params_a) = run();
    let (losses_b, params_b) = run();
    assert_eq!(losses_a, losses_b, "loss trajectories must be identical");
    assert_eq!(params_a, params_b, "final parameters must be identical");
}

#[test]
fn training_losses_are_finite_and_decreasing_on_average() {
    let corpus: Vec<Vec<u32>> = (0..16)
        .map(|i| sequence(&[5 + (i % 8), 13 + (i % 5), 20 + (i % 7), 27, 30 + (i % 4)]))
        .collect();
    let cfg = PretrainConfig {
        steps: 40,
        batch_size: 4,
        learning_rate: 2e-3,
        ..Default::default()
    };
    let mut w = tiny_weights(31);
    let records = pretrain(&mut w, &corpus, &cfg, 99, |_| {}).unwrap();
    assert!(records.iter().all(|r| r.loss_total.is_finite()));
    let head: f64 = records[..10].iter().map(|r| r.loss_total).sum::<f64>() / 10.0;
    let tail: f64 = records[records.len() - 10..].iter().map(|r| r.loss_total).sum::<f64>() / 10.0;
    assert!(tail < head, "mean loss should drop: {head} -> {tail}");
}

#[test]
fn mask_rate_validation() {
    let cfg = PretrainConfig { alpha: 0.8, beta: 0.4, ..Default::default() };
    assert!(cfg.validate().is_err());
    let cfg = PretrainConfig { alpha: -0.1, ..Default::default() };
    assert!(cfg.validate().is_err());
}
