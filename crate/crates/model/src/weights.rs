//! All learnable parameters. The word embedding matrix is stored exactly
//! once and referenced by the encoder input embedding, the decoder input
//! embedding, every LM-head output projection, and the bottleneck weighting;
//! there is no second copy anywhere to drift out of sync.

use lexret_autodiff::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;

/// Which LM heads exist beside the encoder's.
///
/// `TiedDefault` gives the decoder its own transform/bias (output projection
/// still tied to the word embeddings). `SharedWithEncoder` reuses the
/// encoder head for decoding. `ExtraBottleneckHead` adds a third head that
/// produces the logits feeding the lexicon-importance distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadLayout {
    TiedDefault,
    SharedWithEncoder,
    ExtraHead,
}

impl Default for HeadLayout {
    fn default() -> Self {
        HeadLayout::TiedDefault
    }
}

#[derive(Debug, Clone)]
pub struct NormParams {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl NormParams {
    fn init(dim: usize) -> NormParams {
        NormParams {
            scale: Tensor::new(vec![dim], vec![1.0; dim]).with_grad(),
            shift: Tensor::zeros(vec![dim]).with_grad(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub attn_norm: NormParams,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
    pub ff_norm: NormParams,
}

impl LayerWeights {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> LayerWeights {
        let d = cfg.hidden_size;
        let f = cfg.ff_dim();
        LayerWeights {
            wq: normal_tensor(rng, vec![d, d]),
            bq: Tensor::zeros(vec![d]).with_grad(),
            wk: normal_tensor(rng, vec![d, d]),
            bk: Tensor::zeros(vec![d]).with_grad(),
            wv: normal_tensor(rng, vec![d, d]),
            bv: Tensor::zeros(vec![d]).with_grad(),
            wo: normal_tensor(rng, vec![d, d]),
            bo: Tensor::zeros(vec![d]).with_grad(),
            attn_norm: NormParams::init(d),
            ff1_w: normal_tensor(rng, vec![d, f]),
            ff1_b: Tensor::zeros(vec![f]).with_grad(),
            ff2_w: normal_tensor(rng, vec![f, d]),
            ff2_b: Tensor::zeros(vec![d]).with_grad(),
            ff_norm: NormParams::init(d),
        }
    }
}

/// Masked-LM head: dense transform, gelu, layer norm, then projection by
/// the tied embedding matrix plus a per-token bias.
#[derive(Debug, Clone)]
pub struct LmHeadWeights {
    pub transform_w: Tensor,
    pub transform_b: Tensor,
    pub norm: NormParams,
    pub vocab_bias: Tensor,
}

impl LmHeadWeights {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> LmHeadWeights {
        let d = cfg.hidden_size;
        LmHeadWeights {
            transform_w: normal_tensor(rng, vec![d, d]),
            transform_b: Tensor::zeros(vec![d]).with_grad(),
            norm: NormParams::init(d),
            vocab_bias: Tensor::zeros(vec![cfg.vocab_size]).with_grad(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerWeights {
    pub config: ModelConfig,
    pub head_layout: HeadLayout,
    /// The one tied embedding matrix, [vocab, hidden].
    pub word_embedding: Tensor,
    /// Learned absolute positions, [max_seq, hidden]; one table shared by
    /// encoder and decoder.
    pub position_embedding: Tensor,
    pub enc_embed_norm: NormParams,
    pub dec_embed_norm: NormParams,
    pub encoder: Vec<LayerWeights>,
    pub decoder: Vec<LayerWeights>,
    pub enc_head: LmHeadWeights,
    /// Decoder's own head; absent when shared with the encoder.
    pub dec_head: Option<LmHeadWeights>,
    /// Dedicated head for the lexicon-importance logits (ablation).
    pub bottleneck_head: Option<LmHeadWeights>,
}

const INIT_STD: f64 = 0.02;

impl TransformerWeights {
    pub fn init(config: ModelConfig, head_layout: HeadLayout, seed: u64) -> TransformerWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_size;
        let word_embedding = normal_tensor(&mut rng, vec![config.vocab_size, d]);
        let position_embedding = normal_tensor(&mut rng, vec![config.max_sequence_length, d]);
        let encoder = (0..config.encoder_layers)
            .map(|_| LayerWeights::init(&config, &mut rng))
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|_| LayerWeights::init(&config, &mut rng))
            .collect();
        let enc_head = LmHeadWeights::init(&config, &mut rng);
        let dec_head = match head_layout {
            HeadLayout::SharedWithEncoder => None,
            _ => Some(LmHeadWeights::init(&config, &mut rng)),
        };
        let bottleneck_head = match head_layout {
            HeadLayout::ExtraHead => Some(LmHeadWeights::init(&config, &mut rng)),
            _ => None,
        };
        TransformerWeights {
            enc_embed_norm: NormParams::init(d),
            dec_embed_norm: NormParams::init(d),
            config,
            head_layout,
            word_embedding,
            position_embedding,
            encoder,
            decoder,
            enc_head,
            dec_head,
            bottleneck_head,
        }
    }

    /// Visit every parameter in a fixed order with a stable name.
    pub fn for_each_param(&self, mut f: impl FnMut(&str, &Tensor)) {
        self.visit(|name, t| f(name, t));
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        macro_rules! visit {
            ($name:expr, $t:expr) => {
                f($name, $t)
            };
        }
        visit!("word_embedding", &mut self.word_embedding);
        visit!("position_embedding", &mut self.position_embedding);
        visit!("enc_embed_norm.scale", &mut self.enc_embed_norm.scale);
        visit!("enc_embed_norm.shift", &mut self.enc_embed_norm.shift);
        visit!("dec_embed_norm.scale", &mut self.dec_embed_norm.scale);
        visit!("dec_embed_norm.shift", &mut self.dec_embed_norm.shift);
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            for (suffix, t) in layer_fields_mut(layer) {
                f(&format!("enc.{i}.{suffix}"), t);
            }
        }
        for (i, layer) in self.decoder.iter_mut().enumerate() {
            for (suffix, t) in layer_fields_mut(layer) {
                f(&format!("dec.{i}.{suffix}"), t);
            }
        }
        for (suffix, t) in head_fields_mut(&mut self.enc_head) {
            f(&format!("enc_head.{suffix}"), t);
        }
        if let Some(head) = self.dec_head.as_mut() {
            for (suffix, t) in head_fields_mut(head) {
                f(&format!("dec_head.{suffix}"), t);
            }
        }
        if let Some(head) = self.bottleneck_head.as_mut() {
            for (suffix, t) in head_fields_mut(head) {
                f(&format!("bottleneck_head.{suffix}"), t);
            }
        }
    }

    fn visit(&self, mut f: impl FnMut(&str, &Tensor)) {
        f("word_embedding", &self.word_embedding);
        f("position_embedding", &self.position_embedding);
        f("enc_embed_norm.scale", &self.enc_embed_norm.scale);
        f("enc_embed_norm.shift", &self.enc_embed_norm.shift);
        f("dec_embed_norm.scale", &self.dec_embed_norm.scale);
        f("dec_embed_norm.shift", &self.dec_embed_norm.shift);
        for (i, layer) in self.encoder.iter().enumerate() {
            for (suffix, t) in layer_fields(layer) {
                f(&format!("enc.{i}.{suffix}"), t);
            }
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            for (suffix, t) in layer_fields(layer) {
                f(&format!("dec.{i}.{suffix}"), t);
            }
        }
        for (suffix, t) in head_fields(&self.enc_head) {
            f(&format!("enc_head.{suffix}"), t);
        }
        if let Some(head) = self.dec_head.as_ref() {
            for (suffix, t) in head_fields(head) {
                f(&format!("dec_head.{suffix}"), t);
            }
        }
        if let Some(head) = self.bottleneck_head.as_ref() {
            for (suffix, t) in head_fields(head) {
                f(&format!("bottleneck_head.{suffix}"), t);
            }
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, t| n += t.numel());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_param(|_, t| ok &= t.is_finite());
        ok
    }

    pub fn max_param_abs(&self) -> f64 {
        let mut max = 0.0f64;
        self.for_each_param(|_, t| {
            for v in t.data() {
                max = max.max(v.abs());
            }
        });
        max
    }
}

fn layer_fields(layer: &LayerWeights) -> Vec<(&'static str, &Tensor)> {
    vec![
        ("wq", &layer.wq),
        ("bq", &layer.bq),
        ("wk", &layer.wk),
        ("bk", &layer.bk),
        ("wv", &layer.wv),
        ("bv", &layer.bv),
        ("wo", &layer.wo),
        ("bo", &layer.bo),
        ("attn_norm.scale", &layer.attn_norm.scale),
        ("attn_norm.shift", &layer.attn_norm.shift),
        ("ff1_w", &layer.ff1_w),
        ("ff1_b", &layer.ff1_b),
        ("ff2_w", &layer.ff2_w),
        ("ff2_b", &layer.ff2_b),
        ("ff_norm.scale", &layer.ff_norm.scale),
        ("ff_norm.shift", &layer.ff_norm.shift),
    ]
}

fn layer_fields_mut(layer: &mut LayerWeights) -> Vec<(&'static str, &mut Tensor)> {
    vec![
        ("wq", &mut layer.wq),
        ("bq", &mut layer.bq),
        ("wk", &mut layer.wk),
        ("bk", &mut layer.bk),
        ("wv", &mut layer.wv),
        ("bv", &mut layer.bv),
        ("wo", &mut layer.wo),
        ("bo", &mut layer.bo),
        ("attn_norm.scale", &mut layer.attn_norm.scale),
        ("attn_norm.shift", &mut layer.attn_norm.shift),
        ("ff1_w", &mut layer.ff1_w),
        ("ff1_b", &mut layer.ff1_b),
        ("ff2_w", &mut layer.ff2_w),
        ("ff2_b", &mut layer.ff2_b),
        ("ff_norm.scale", &mut layer.ff_norm.scale),
        ("ff_norm.shift", &mut layer.ff_norm.shift),
    ]
}

fn head_fields(head: &LmHeadWeights) -> Vec<(&'static str, &Tensor)> {
    vec![
        ("transform_w", &head.transform_w),
        ("transform_b", &head.transform_b),
        ("norm.scale", &head.norm.scale),
        ("norm.shift", &head.norm.shift),
        ("vocab_bias", &head.vocab_bias),
    ]
}

fn head_fields_mut(head: &mut LmHeadWeights) -> Vec<(&'static str, &mut Tensor)> {
    vec![
        ("transform_w", &mut head.transform_w),
        ("transform_b", &mut head.transform_b),
        ("norm.scale", &mut head.norm.scale),
        ("norm.shift", &mut head.norm.shift),
        ("vocab_bias", &mut head.vocab_bias),
    ]
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| normal(rng) * INIT_STD).collect();
    Tensor::new(shape, data).with_grad()
}

/// Box-Muller standard normal from the seeded stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
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

    #[test]
    fn init_is_deterministic() {
        let a = TransformerWeights::init(tiny(), HeadLayout::TiedDefault, 42);
        let b = TransformerWeights::init(tiny(), HeadLayout::TiedDefault, 42);
        let mut pairs = Vec::new();
        a.for_each_param(|name, t| pairs.push((name.to_string(), t.data().to_vec())));
        b.for_each_param(|name, t| {
            let (expect_name, expect_data) = pairs.remove(0);
            assert_eq!(name, expect_name);
            assert_eq!(t.data(), expect_data.as_slice());
        });
    }

    #[test]
    fn head_layout_controls_optional_heads() {
        let tied = TransformerWeights::init(tiny(), HeadLayout::TiedDefault, 1);
        assert!(tied.dec_head.is_some() && tied.bottleneck_head.is_none());
        let shared = TransformerWeights::init(tiny(), HeadLayout::SharedWithEncoder, 1);
        assert!(shared.dec_head.is_none() && shared.bottleneck_head.is_none());
        let extra = TransformerWeights::init(tiny(), HeadLayout::ExtraHead, 1);
        assert!(extra.dec_head.is_some() && extra.bottleneck_head.is_some());
    }

    #[test]
    fn visit_orders_agree() {
        let mut w = TransformerWeights::init(tiny(), HeadLayout::ExtraHead, 7);
        let mut names = Vec::new();
        w.for_each_param(|n, _| names.push(n.to_string()));
        let mut mut_names = Vec::new();
        w.for_each_param_mut(|n, _| mut_names.push(n.to_string()));
        assert_eq!(names, mut_names);
        assert!(names.contains(&"enc.1.ff2_w".to_string()));
        assert!(names.contains(&"bottleneck_head.vocab_bias".to_string()));
    }
}
