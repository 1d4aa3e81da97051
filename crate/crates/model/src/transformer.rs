//! Tape-graph construction for the encoder/decoder stacks and LM heads.
//!
//! One `TapedWeights` registers every parameter on a tape exactly once per
//! step; in particular the word embedding matrix gets a single node that is
//! shared by both input embeddings, all LM-head projections, and the
//! bottleneck weighting, so tied gradients accumulate on one leaf.

use lexret_autodiff::{Tape, Tensor, TensorId};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::vocab::CLS_ID;
use crate::weights::{LayerWeights, LmHeadWeights, NormParams, TransformerWeights};

/// Keys are close to anything softmax can normalize away; padding gets a
/// large negative bias that underflows to exact zero attention.
const PAD_BIAS: f64 = -1e30;

pub struct TapedNorm {
    pub scale: TensorId,
    pub shift: TensorId,
}

pub struct TapedLayer {
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
    pub attn_norm: TapedNorm,
    pub ff1_w: TensorId,
    pub ff1_b: TensorId,
    pub ff2_w: TensorId,
    pub ff2_b: TensorId,
    pub ff_norm: TapedNorm,
}

pub struct TapedHead {
    pub transform_w: TensorId,
    pub transform_b: TensorId,
    pub norm: TapedNorm,
    pub vocab_bias: TensorId,
}

pub struct TapedWeights {
    pub config: ModelConfig,
    pub word_embedding: TensorId,
    pub position_embedding: TensorId,
    pub enc_embed_norm: TapedNorm,
    pub dec_embed_norm: TapedNorm,
    pub encoder: Vec<TapedLayer>,
    pub decoder: Vec<TapedLayer>,
    pub enc_head: TapedHead,
    pub dec_head: Option<TapedHead>,
    pub bottleneck_head: Option<TapedHead>,
}

/// Attention matrices recorded during a forward pass, one per layer.
#[derive(Default)]
pub struct ForwardTrace {
    pub attention: Vec<TensorId>,
}

impl TapedWeights {
    /// Register every parameter for training (gradients flow back).
    pub fn register(tape: &mut Tape, weights: &TransformerWeights) -> TapedWeights {
        Self::register_impl(tape, weights, false)
    }

    /// Register a frozen snapshot for inference; no gradient bookkeeping.
    pub fn register_frozen(tape: &mut Tape, weights: &TransformerWeights) -> TapedWeights {
        Self::register_impl(tape, weights, true)
    }

    fn register_impl(tape: &mut Tape, weights: &TransformerWeights, frozen: bool) -> TapedWeights {
        let mut reg = |t: &Tensor| {
            if frozen {
                tape.constant(t.shape().to_vec(), t.data().to_vec())
            } else {
                tape.leaf(t)
            }
        };
        let word_embedding = reg(&weights.word_embedding);
        let position_embedding = reg(&weights.position_embedding);
        let enc_embed_norm = norm(&mut reg, &weights.enc_embed_norm);
        let dec_embed_norm = norm(&mut reg, &weights.dec_embed_norm);
        let encoder = weights.encoder.iter().map(|l| layer(&mut reg, l)).collect();
        let decoder = weights.decoder.iter().map(|l| layer(&mut reg, l)).collect();
        let enc_head = head(&mut reg, &weights.enc_head);
        let dec_head = weights.dec_head.as_ref().map(|h| head(&mut reg, h));
        let bottleneck_head = weights.bottleneck_head.as_ref().map(|h| head(&mut reg, h));
        TapedWeights {
            config: weights.config,
            word_embedding,
            position_embedding,
            enc_embed_norm,
            dec_embed_norm,
            encoder,
            decoder,
            enc_head,
            dec_head,
            bottleneck_head,
        }
    }

    /// Copy accumulated gradients off the tape into `weights.grad` buffers,
    /// adding to any gradient already present.
    pub fn write_grads(&self, tape: &Tape, weights: &mut TransformerWeights) {
        let mut by_name = std::collections::BTreeMap::new();
        self.visit_ids(|name, id| {
            by_name.insert(name, id);
        });
        weights.for_each_param_mut(|name, tensor| {
            let id = by_name[name];
            if let Some(grad) = tape.grad(id) {
                match tensor.grad.as_mut() {
                    Some(existing) => {
                        for (e, g) in existing.iter_mut().zip(grad) {
                            *e += g;
                        }
                    }
                    None => tensor.grad = Some(grad.to_vec()),
                }
            }
        });
    }

    fn visit_ids(&self, mut f: impl FnMut(String, TensorId)) {
        f("word_embedding".into(), self.word_embedding);
        f("position_embedding".into(), self.position_embedding);
        f("enc_embed_norm.scale".into(), self.enc_embed_norm.scale);
        f("enc_embed_norm.shift".into(), self.enc_embed_norm.shift);
        f("dec_embed_norm.scale".into(), self.dec_embed_norm.scale);
        f("dec_embed_norm.shift".into(), self.dec_embed_norm.shift);
        for (i, l) in self.encoder.iter().enumerate() {
            visit_layer_ids(&mut f, &format!("enc.{i}"), l);
        }
        for (i, l) in self.decoder.iter().enumerate() {
            visit_layer_ids(&mut f, &format!("dec.{i}"), l);
        }
        visit_head_ids(&mut f, "enc_head", &self.enc_head);
        if let Some(h) = &self.dec_head {
            visit_head_ids(&mut f, "dec_head", h);
        }
        if let Some(h) = &self.bottleneck_head {
            visit_head_ids(&mut f, "bottleneck_head", h);
        }
    }

    /// The head the decoder projects through.
    pub fn decoder_head(&self) -> &TapedHead {
        self.dec_head.as_ref().unwrap_or(&self.enc_head)
    }

    /// The head producing lexicon-importance logits.
    pub fn bottleneck_logits_head(&self) -> &TapedHead {
        self.bottleneck_head.as_ref().unwrap_or(&self.enc_head)
    }
}

fn norm(reg: &mut impl FnMut(&Tensor) -> TensorId, n: &NormParams) -> TapedNorm {
    TapedNorm { scale: reg(&n.scale), shift: reg(&n.shift) }
}

fn layer(reg: &mut impl FnMut(&Tensor) -> TensorId, l: &LayerWeights) -> TapedLayer {
    TapedLayer {
        wq: reg(&l.wq),
        bq: reg(&l.bq),
        wk: reg(&l.wk),
        bk: reg(&l.bk),
        wv: reg(&l.wv),
        bv: reg(&l.bv),
        wo: reg(&l.wo),
        bo: reg(&l.bo),
        attn_norm: norm(reg, &l.attn_norm),
        ff1_w: reg(&l.ff1_w),
        ff1_b: reg(&l.ff1_b),
        ff2_w: reg(&l.ff2_w),
        ff2_b: reg(&l.ff2_b),
        ff_norm: norm(reg, &l.ff_norm),
    }
}

fn head(reg: &mut impl FnMut(&Tensor) -> TensorId, h: &LmHeadWeights) -> TapedHead {
    TapedHead {
        transform_w: reg(&h.transform_w),
        transform_b: reg(&h.transform_b),
        norm: norm(reg, &h.norm),
        vocab_bias: reg(&h.vocab_bias),
    }
}

fn visit_layer_ids(f: &mut impl FnMut(String, TensorId), prefix: &str, l: &TapedLayer) {
    f(format!("{prefix}.wq"), l.wq);
    f(format!("{prefix}.bq"), l.bq);
    f(format!("{prefix}.wk"), l.wk);
    f(format!("{prefix}.bk"), l.bk);
    f(format!("{prefix}.wv"), l.wv);
    f(format!("{prefix}.bv"), l.bv);
    f(format!("{prefix}.wo"), l.wo);
    f(format!("{prefix}.bo"), l.bo);
    f(format!("{prefix}.attn_norm.scale"), l.attn_norm.scale);
    f(format!("{prefix}.attn_norm.shift"), l.attn_norm.shift);
    f(format!("{prefix}.ff1_w"), l.ff1_w);
    f(format!("{prefix}.ff1_b"), l.ff1_b);
    f(format!("{prefix}.ff2_w"), l.ff2_w);
    f(format!("{prefix}.ff2_b"), l.ff2_b);
    f(format!("{prefix}.ff_norm.scale"), l.ff_norm.scale);
    f(format!("{prefix}.ff_norm.shift"), l.ff_norm.shift);
}

fn visit_head_ids(f: &mut impl FnMut(String, TensorId), prefix: &str, h: &TapedHead) {
    f(format!("{prefix}.transform_w"), h.transform_w);
    f(format!("{prefix}.transform_b"), h.transform_b);
    f(format!("{prefix}.norm.scale"), h.norm.scale);
    f(format!("{prefix}.norm.shift"), h.norm.shift);
    f(format!("{prefix}.vocab_bias"), h.vocab_bias);
}

fn validate_input(cfg: &ModelConfig, tokens: &[u32], attention_mask: &[bool]) -> Result<()> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if tokens.len() > cfg.max_sequence_length {
        return Err(ModelError::SequenceTooLong { len: tokens.len(), max: cfg.max_sequence_length });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id: bad, vocab: cfg.vocab_size });
    }
    if attention_mask.len() != tokens.len() {
        return Err(ModelError::MaskLengthMismatch { mask: attention_mask.len(), len: tokens.len() });
    }
    Ok(())
}

/// Additive attention bias: one row per query position, `PAD_BIAS` in the
/// columns of masked-out keys.
fn attention_bias(tape: &mut Tape, attention_mask: &[bool]) -> TensorId {
    let n = attention_mask.len();
    let mut row = vec![0.0; n];
    for (j, &keep) in attention_mask.iter().enumerate() {
        if !keep {
            row[j] = PAD_BIAS;
        }
    }
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n {
        data.extend_from_slice(&row);
    }
    tape.constant(vec![n, n], data)
}

fn embed(
    tape: &mut Tape,
    tw: &TapedWeights,
    tokens: &[u32],
) -> Result<TensorId> {
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let words = tape.embedding_lookup(tw.word_embedding, &ids)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pos = tape.embedding_lookup(tw.position_embedding, &positions)?;
    Ok(tape.add(words, pos)?)
}

fn transformer_layer(
    tape: &mut Tape,
    layer: &TapedLayer,
    x: TensorId,
    heads: usize,
    bias: TensorId,
    trace: &mut Option<&mut ForwardTrace>,
) -> Result<TensorId> {
    let n = tape.shape(x)[0];
    let d = tape.shape(x)[1];
    let dh = d / heads;
    debug_assert_eq!(tape.shape(bias), [n, n]);

    let q_all = {
        let p = tape.matmul(x, layer.wq)?;
        tape.add_bias(p, layer.bq)?
    };
    let k_all = {
        let p = tape.matmul(x, layer.wk)?;
        tape.add_bias(p, layer.bk)?
    };
    let v_all = {
        let p = tape.matmul(x, layer.wv)?;
        tape.add_bias(p, layer.bv)?
    };

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(q_all, h * dh, dh)?;
        let k = tape.slice_cols(k_all, h * dh, dh)?;
        let v = tape.slice_cols(v_all, h * dh, dh)?;
        let raw = tape.matmul_nt(q, k)?;
        let scaled = tape.scale(raw, 1.0 / (dh as f64).sqrt());
        let masked = tape.add(scaled, bias)?;
        let attn = tape.softmax(masked)?;
        if let Some(t) = trace.as_deref_mut() {
            t.attention.push(attn);
        }
        head_outputs.push(tape.matmul(attn, v)?);
    }
    let ctx = tape.concat_cols(&head_outputs)?;
    let projected = {
        let p = tape.matmul(ctx, layer.wo)?;
        tape.add_bias(p, layer.bo)?
    };
    let attn_res = tape.add(x, projected)?;
    let attn_out = tape.layer_norm(attn_res, layer.attn_norm.scale, layer.attn_norm.shift)?;

    let ff = {
        let h1 = tape.matmul(attn_out, layer.ff1_w)?;
        let h1 = tape.add_bias(h1, layer.ff1_b)?;
        let h1 = tape.gelu(h1);
        let h2 = tape.matmul(h1, layer.ff2_w)?;
        tape.add_bias(h2, layer.ff2_b)?
    };
    let ff_res = tape.add(attn_out, ff)?;
    Ok(tape.layer_norm(ff_res, layer.ff_norm.scale, layer.ff_norm.shift)?)
}

fn run_stack(
    tape: &mut Tape,
    tw: &TapedWeights,
    layers: &[TapedLayer],
    embedded: TensorId,
    embed_norm: &TapedNorm,
    attention_mask: &[bool],
    mut trace: Option<&mut ForwardTrace>,
) -> Result<TensorId> {
    let mut x = tape.layer_norm(embedded, embed_norm.scale, embed_norm.shift)?;
    let bias = attention_bias(tape, attention_mask);
    for layer in layers {
        x = transformer_layer(tape, layer, x, tw.config.attention_heads, bias, &mut trace)?;
    }
    Ok(x)
}

/// Contextualize a token sequence with the encoder stack: [n, hidden].
/// Masked-out positions attend to nothing and receive no attention mass.
pub fn encode(
    tape: &mut Tape,
    tw: &TapedWeights,
    tokens: &[u32],
    attention_mask: &[bool],
    trace: Option<&mut ForwardTrace>,
) -> Result<TensorId> {
    validate_input(&tw.config, tokens, attention_mask)?;
    let embedded = embed(tape, tw, tokens)?;
    run_stack(tape, tw, &tw.encoder, embedded, &tw.enc_embed_norm, attention_mask, trace)
}

/// Project hidden states to vocabulary logits, [n, vocab]: dense transform,
/// gelu, layer norm, then the tied embedding projection plus per-token bias.
pub fn lm_logits(
    tape: &mut Tape,
    tw: &TapedWeights,
    head: &TapedHead,
    hidden: TensorId,
) -> Result<TensorId> {
    let t = tape.matmul(hidden, head.transform_w)?;
    let t = tape.add_bias(t, head.transform_b)?;
    let t = tape.gelu(t);
    let t = tape.layer_norm(t, head.norm.scale, head.norm.shift)?;
    let projected = tape.matmul_nt(t, tw.word_embedding)?;
    Ok(tape.add_bias(projected, head.vocab_bias)?)
}

/// Run the weakened decoder with the position-0 input embedding replaced by
/// `prefix` (shape [1, hidden]); positional embedding 0 still applies.
/// Returns decoder LM logits [n, vocab].
pub fn decode_with_prefix(
    tape: &mut Tape,
    tw: &TapedWeights,
    prefix: TensorId,
    tokens: &[u32],
    attention_mask: &[bool],
    trace: Option<&mut ForwardTrace>,
) -> Result<TensorId> {
    validate_input(&tw.config, tokens, attention_mask)?;
    if tokens[0] != CLS_ID {
        return Err(ModelError::MissingClsSlot);
    }
    if tape.shape(prefix) != [1, tw.config.hidden_size] {
        return Err(ModelError::InvalidConfig(format!(
            "prefix shape {:?}, expected [1, {}]",
            tape.shape(prefix),
            tw.config.hidden_size
        )));
    }
    let rest_ids: Vec<usize> = tokens[1..].iter().map(|&t| t as usize).collect();
    let word_part = if rest_ids.is_empty() {
        prefix
    } else {
        let rest = tape.embedding_lookup(tw.word_embedding, &rest_ids)?;
        tape.concat_rows(&[prefix, rest])?
    };
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pos = tape.embedding_lookup(tw.position_embedding, &positions)?;
    let embedded = tape.add(word_part, pos)?;
    let hidden = run_stack(
        tape,
        tw,
        &tw.decoder,
        embedded,
        &tw.dec_embed_norm,
        attention_mask,
        trace,
    )?;
    let head = tw.decoder_head();
    lm_logits(tape, tw, head, hidden)
}

/// Plain decoder forward: every position, including [CLS], embeds normally.
/// `decode_with_prefix` with the [CLS] word embedding as prefix is identical.
pub fn decode_plain(
    tape: &mut Tape,
    tw: &TapedWeights,
    tokens: &[u32],
    attention_mask: &[bool],
) -> Result<TensorId> {
    validate_input(&tw.config, tokens, attention_mask)?;
    let embedded = embed(tape, tw, tokens)?;
    let hidden = run_stack(tape, tw, &tw.decoder, embedded, &tw.dec_embed_norm, attention_mask, None)?;
    let head = tw.decoder_head();
    lm_logits(tape, tw, head, hidden)
}
