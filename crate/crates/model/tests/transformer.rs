//! Transformer stack contracts: shapes, masking symmetry, attention
//! normalization, tied-embedding behavior, and the decoder prefix slot.

use lexret_autodiff::{gradcheck, Tape};
use lexret_model::transformer::{
    decode_plain, decode_with_prefix, encode, lm_logits, ForwardTrace, TapedWeights,
};
use lexret_model::vocab::CLS_ID;
use lexret_model::{HeadLayout, ModelConfig, TransformerWeights};

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

fn forward_hidden(weights: &TransformerWeights, tokens: &[u32], mask: &[bool]) -> Vec<f64> {
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, weights);
    let h = encode(&mut tape, &tw, tokens, mask, None).unwrap();
    tape.value(h).to_vec()
}

#[test]
fn encode_output_shape() {
    let weights = tiny_weights(1);
    let tokens = [CLS_ID, 7, 8, 9, 2];
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, &weights);
    let h = encode(&mut tape, &tw, &tokens, &[true; 5], None).unwrap();
    assert_eq!(tape.shape(h), [5, 16]);
}

#[test]
fn encode_rejects_bad_inputs() {
    let weights = tiny_weights(2);
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, &weights);
    let long: Vec<u32> = (0..13).map(|_| 6).collect();
    assert!(encode(&mut tape, &tw, &long, &[true; 13], None).is_err());
    assert!(encode(&mut tape, &tw, &[99], &[true], None).is_err());
    assert!(encode(&mut tape, &tw, &[6, 7], &[true], None).is_err());
}

#[test]
fn padding_tail_content_cannot_leak() {
    // Two inputs identical on real positions, different on masked-out tail:
    // non-pad outputs must agree bit for bit.
    let weights = tiny_weights(3);
    let mask = [true, true, true, false, false];
    let a = forward_hidden(&weights, &[CLS_ID, 7, 8, 30, 31], &mask);
    let b = forward_hidden(&weights, &[CLS_ID, 7, 8, 44, 12], &mask);
    let d = weights.config.hidden_size;
    assert_eq!(a[..3 * d], b[..3 * d], "valid positions must not see the padding tail");
}

#[test]
fn attention_rows_sum_to_one_at_every_layer() {
    let weights = tiny_weights(4);
    let tokens = [CLS_ID, 9, 17, 23, 6, 2];
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, &weights);
    let mut trace = ForwardTrace::default();
    encode(&mut tape, &tw, &tokens, &[true; 6], Some(&mut trace)).unwrap();
    // encoder_layers x attention_heads softmax matrices
    assert_eq!(trace.attention.len(), 2 * 2);
    for &attn in &trace.attention {
        let v = tape.value(attn);
        let n = tape.shape(attn)[0];
        for r in 0..n {
            let sum: f64 = v[r * n..(r + 1) * n].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {r} sums to {sum}");
        }
    }
}

#[test]
fn lm_logits_shape_and_zero_head() {
    let mut weights = tiny_weights(5);
    let tokens = [CLS_ID, 7, 8, 2];
    {
        let mut tape = Tape::new();
        let tw = TapedWeights::register_frozen(&mut tape, &weights);
        let h = encode(&mut tape, &tw, &tokens, &[true; 4], None).unwrap();
        let s = lm_logits(&mut tape, &tw, &tw.enc_head, h).unwrap();
        assert_eq!(tape.shape(s), [4, 50]);
    }
    // Zero transform weights and biases collapse the logits to exactly zero.
    for v in weights.enc_head.transform_w.data_mut() {
        *v = 0.0;
    }
    for v in weights.enc_head.transform_b.data_mut() {
        *v = 0.0;
    }
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, &weights);
    let h = encode(&mut tape, &tw, &tokens, &[true; 4], None).unwrap();
    let s = lm_logits(&mut tape, &tw, &tw.enc_head, h).unwrap();
    assert!(tape.value(s).iter().all(|&v| v == 0.0));
}

#[test]
fn tied_embedding_gradient_accumulates_both_uses() {
    // Finite differences over the embedding matrix of a masked cross-entropy
    // loss: the analytic gradient must cover both the input-embedding use
    // and the head-projection use at once.
    let weights = tiny_weights(6);
    let tokens: Vec<u32> = vec![CLS_ID, 7, 8, 9, 2];
    let targets: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions = vec![1usize, 3];

    let loss_of = |w: &TransformerWeights| -> f64 {
        let mut tape = Tape::new();
        let tw = TapedWeights::register(&mut tape, w);
        let h = encode(&mut tape, &tw, &tokens, &[true; 5], None).unwrap();
        let s = lm_logits(&mut tape, &tw, &tw.enc_head, h).unwrap();
        let loss = tape.masked_cross_entropy(s, &targets, &positions).unwrap();
        tape.scalar(loss)
    };

    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, &weights);
    let h = encode(&mut tape, &tw, &tokens, &[true; 5], None).unwrap();
    let s = lm_logits(&mut tape, &tw, &tw.enc_head, h).unwrap();
    let loss = tape.masked_cross_entropy(s, &targets, &positions).unwrap();
    tape.backward(loss).unwrap();
    let analytic = tape.grad(tw.word_embedding).unwrap().to_vec();

    let base = weights.word_embedding.data().to_vec();
    let mut probe = weights.clone();
    let err = gradcheck::max_relative_error(&base, &analytic, 1e-5, |vals| {
        probe.word_embedding.data_mut().copy_from_slice(vals);
        loss_of(&probe)
    });
    assert!(err < 1e-6, "tied-embedding gradient rel err {err}");
}

#[test]
fn mutating_the_single_storage_moves_every_use() {
    // One element of the embedding matrix changes; encoder embeddings,
    // decoder embeddings, and head projections all shift, because they all
    // read the same tensor.
    let mut weights = tiny_weights(7);
    let tokens = [CLS_ID, 7, 2];
    let mask = [true; 3];

    let enc_logits = |w: &TransformerWeights| {
        let mut tape = Tape::new();
        let tw = TapedWeights::register_frozen(&mut tape, w);
        let h = encode(&mut tape, &tw, &tokens, &mask, None).unwrap();
        let s = lm_logits(&mut tape, &tw, &tw.enc_head, h).unwrap();
        tape.value(s).to_vec()
    };
    let dec_logits = |w: &TransformerWeights| {
        let mut tape = Tape::new();
        let tw = TapedWeights::register_frozen(&mut tape, w);
        let s = decode_plain(&mut tape, &tw, &tokens, &mask).unwrap();
        tape.value(s).to_vec()
    };

    let enc_before = enc_logits(&weights);
    let dec_before = dec_logits(&weights);
    // token 7 participates in both forwards; perturb one of its coordinates
    let idx = 7 * weights.config.hidden_size + 3;
    weights.word_embedding.data_mut()[idx] += 0.25;
    assert_ne!(enc_before, enc_logits(&weights));
    assert_ne!(dec_before, dec_logits(&weights));
}

#[test]
fn prefix_substitution_identity() {
    // Feeding the [CLS] word embedding as the prefix is exactly a plain
    // decoder forward.
    let weights = tiny_weights(8);
    let tokens = [CLS_ID, 11, 12, 13, 2];
    let mask = [true; 5];

    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, &weights);
    let cls_embedding = tape
        .embedding_lookup(tw.word_embedding, &[CLS_ID as usize])
        .unwrap();
    let with_prefix =
        decode_with_prefix(&mut tape, &tw, cls_embedding, &tokens, &mask, None).unwrap();
    let plain = decode_plain(&mut tape, &tw, &tokens, &mask).unwrap();
    assert_eq!(tape.value(with_prefix), tape.value(plain));
    assert_eq!(tape.shape(with_prefix), [5, 50]);
}

#[test]
fn decode_requires_the_cls_slot() {
    let weights = tiny_weights(9);
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, &weights);
    let prefix = tape.constant(vec![1, 16], vec![0.0; 16]);
    let err = decode_with_prefix(&mut tape, &tw, prefix, &[7, 8], &[true; 2], None);
    assert!(err.is_err());
}

#[test]
fn prefix_gradient_matches_finite_differences() {
    let weights = tiny_weights(10);
    let tokens = [CLS_ID, 20, 21, 2];
    let mask = [true; 4];
    let targets: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions = vec![1usize, 2];
    let prefix_data: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.37).sin() * 0.5).collect();

    let loss_of = |prefix_vals: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let tw = TapedWeights::register(&mut tape, &weights);
        let prefix = tape.constant(vec![1, 16], prefix_vals.to_vec());
        let s = decode_with_prefix(&mut tape, &tw, prefix, &tokens, &mask, None).unwrap();
        let loss = tape.masked_cross_entropy(s, &targets, &positions).unwrap();
        tape.scalar(loss)
    };

    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, &weights);
    let prefix = tape.variable(vec![1, 16], prefix_data.clone());
    let s = decode_with_prefix(&mut tape, &tw, prefix, &tokens, &mask, None).unwrap();
    let loss = tape.masked_cross_entropy(s, &targets, &positions).unwrap();
    tape.backward(loss).unwrap();
    let analytic = tape.grad(prefix).unwrap().to_vec();

    let err = gradcheck::max_relative_error(&prefix_data, &analytic, 1e-5, loss_of);
    assert!(err < 1e-6, "prefix gradient rel err {err}");
}

#[test]
fn forward_is_deterministic() {
    let weights = tiny_weights(11);
    let tokens = [CLS_ID, 30, 31, 32, 2];
    let a = forward_hidden(&weights, &tokens, &[true; 5]);
    let b = forward_hidden(&weights, &tokens, &[true; 5]);
    assert_eq!(a, b);
}

#[test]
fn shared_head_layout_routes_decoder_through_encoder_head() {
    let shared = TransformerWeights::init(tiny_config(), HeadLayout::SharedWithEncoder, 12);
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, &shared);
    assert!(tw.dec_head.is_none());
    let tokens = [CLS_ID, 5, 2];
    // decode_plain must still work by falling back to the encoder head
    let s = decode_plain(&mut tape, &tw, &tokens, &[true; 3]).unwrap();
    assert_eq!(tape.shape(s), [3, 50]);
}
