//! Lexicon-bottlenecked autoencoder pre-training.
//!
//! The encoder runs a standard masked-LM objective. Its logits are pooled
//! over the sequence into a lexicon-importance distribution, the embedding
//! matrix turns the distribution into a dense bag-of-words bottleneck, and
//! a shallow, aggressively masked decoder must reconstruct the text with
//! the bottleneck as its only position-0 input. The joint loss is the sum
//! of both masked-LM terms.
//!
//! Gradient never flows into the word embedding matrix through the
//! bottleneck weighting edge (only through lookups and head projections)
//! unless the ablation flag asks for it.

use lexret_autodiff::optim::{Adam, AdamConfig};
use lexret_autodiff::{Tape, TensorId};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::masking::{MaskedSample, MaskingStrategy};
use crate::transformer::{decode_with_prefix, encode, lm_logits, TapedWeights};
use crate::vocab::{is_structural, CLS_ID};
use crate::weights::{HeadLayout, TransformerWeights};

/// What the decoder receives in its [CLS] slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BottleneckVariant {
    /// Softmax-normalized lexicon importance weighting the embeddings.
    SoftmaxCbow,
    /// Saturation-based L1-normalized importance weighting the embeddings.
    SaturatedCbow,
    /// The encoder's position-0 contextual vector (dense bottleneck).
    DenseCls,
    /// No bottleneck: the plain [CLS] word embedding.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Encoder mask rate.
    pub alpha: f64,
    /// Extra decoder mask rate on top of alpha.
    pub beta: f64,
    pub bottleneck: BottleneckVariant,
    pub masking: MaskingStrategy,
    /// Ablation: let the bottleneck weighting edge update the embeddings.
    pub embedding_grad_through_bottleneck: bool,
    pub decoder_lm_head: HeadLayout,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of steps spent in linear warmup before linear decay.
    pub warmup_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            alpha: 0.30,
            beta: 0.20,
            bottleneck: BottleneckVariant::SoftmaxCbow,
            masking: MaskingStrategy::Inclusive,
            embedding_grad_through_bottleneck: false,
            decoder_lm_head: HeadLayout::TiedDefault,
            steps: 500,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta > 1.0 {
            return Err(ModelError::InvalidConfig(format!(
                "mask rates alpha={} beta={} must be non-negative with alpha+beta <= 1",
                self.alpha, self.beta
            )));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(ModelError::InvalidConfig("steps and batch size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(ModelError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Normalization applied to pooled logits in the lexicon-importance
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceNorm {
    Softmax,
    SaturatedL1,
}

/// Pool LM logits over the included sequence positions and normalize into
/// a distribution over the vocabulary (shape [vocab], sums to 1).
pub fn lexicon_importance(
    tape: &mut Tape,
    logits: TensorId,
    included_positions: &[usize],
    norm: ImportanceNorm,
) -> Result<TensorId> {
    let pooled = tape.max_pool_rows(logits, included_positions)?;
    let a = match norm {
        ImportanceNorm::Softmax => tape.softmax(pooled)?,
        ImportanceNorm::SaturatedL1 => {
            let rectified = tape.relu(pooled);
            let saturated = tape.log1p(rectified);
            tape.l1_normalize(saturated)?
        }
    };
    Ok(a)
}

/// Bag-of-words bottleneck: the expectation of word embeddings under the
/// importance distribution, [1, hidden]. The embedding matrix participates
/// through a gradient-cut edge unless `grad_through_embedding` is set.
pub fn cbow_bottleneck(
    tape: &mut Tape,
    importance: TensorId,
    word_embedding: TensorId,
    grad_through_embedding: bool,
) -> Result<TensorId> {
    let vocab = tape.shape(word_embedding)[0];
    let a_row = tape.reshape(importance, vec![1, vocab])?;
    let table = if grad_through_embedding {
        word_embedding
    } else {
        tape.stop_gradient(word_embedding)
    };
    Ok(tape.matmul(a_row, table)?)
}

/// Sequence positions eligible for lexicon pooling: everything that is not
/// a structural token in the original sequence.
pub fn pooling_positions(tokens: &[u32]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| !is_structural(t))
        .map(|(p, _)| p)
        .collect()
}

/// Scalar loss nodes of one pre-training step.
pub struct PretrainLossGraph {
    pub total: TensorId,
    pub elm: TensorId,
    pub dlm: TensorId,
}

/// Build the joint loss for a batch: mean encoder masked-LM loss plus mean
/// decoder masked-LM loss.
pub fn pretrain_loss_graph(
    tape: &mut Tape,
    tw: &TapedWeights,
    batch: &[MaskedSample],
    cfg: &PretrainConfig,
) -> Result<PretrainLossGraph> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut elm_terms = Vec::with_capacity(batch.len());
    let mut dlm_terms = Vec::with_capacity(batch.len());
    for sample in batch {
        let n = sample.tokens.len();
        let all_valid = vec![true; n];
        let targets: Vec<usize> = sample.tokens.iter().map(|&t| t as usize).collect();

        let hidden = encode(tape, tw, &sample.enc_tokens, &all_valid, None)?;
        let enc_logits = lm_logits(tape, tw, &tw.enc_head, hidden)?;
        elm_terms.push(tape.masked_cross_entropy(enc_logits, &targets, &sample.enc_mask)?);

        let prefix = match cfg.bottleneck {
            BottleneckVariant::SoftmaxCbow | BottleneckVariant::SaturatedCbow => {
                let norm = if cfg.bottleneck == BottleneckVariant::SoftmaxCbow {
                    ImportanceNorm::Softmax
                } else {
                    ImportanceNorm::SaturatedL1
                };
                let bottleneck_logits = if tw.bottleneck_head.is_some() {
                    let head = tw.bottleneck_logits_head();
                    lm_logits(tape, tw, head, hidden)?
                } else {
                    enc_logits
                };
                let included = pooling_positions(&sample.tokens);
                let importance = lexicon_importance(tape, bottleneck_logits, &included, norm)?;
                cbow_bottleneck(
                    tape,
                    importance,
                    tw.word_embedding,
                    cfg.embedding_grad_through_bottleneck,
                )?
            }
            BottleneckVariant::DenseCls => tape.slice_rows(hidden, 0, 1)?,
            BottleneckVariant::Disabled => {
                tape.embedding_lookup(tw.word_embedding, &[CLS_ID as usize])?
            }
        };

        let dec_logits = decode_with_prefix(tape, tw, prefix, &sample.dec_tokens, &all_valid, None)?;
        dlm_terms.push(tape.masked_cross_entropy(dec_logits, &targets, &sample.dec_mask)?);
    }

    let elm = mean_of(tape, &elm_terms)?;
    let dlm = mean_of(tape, &dlm_terms)?;
    let total = tape.add(elm, dlm)?;
    Ok(PretrainLossGraph { total, elm, dlm })
}

fn mean_of(tape: &mut Tape, terms: &[TensorId]) -> Result<TensorId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

/// Loss values from one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PretrainRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_elm: f64,
    pub loss_dlm: f64,
}

/// Forward/backward on one batch and one optimizer step. Errors with
/// diagnostics when the loss stops being finite.
pub fn pretrain_step(
    weights: &mut TransformerWeights,
    batch: &[MaskedSample],
    cfg: &PretrainConfig,
    optimizer: &mut Adam,
    step: usize,
) -> Result<PretrainRecord> {
    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, weights);
    let graph = pretrain_loss_graph(&mut tape, &tw, batch, cfg)?;
    let record = PretrainRecord {
        step,
        loss_total: tape.scalar(graph.total),
        loss_elm: tape.scalar(graph.elm),
        loss_dlm: tape.scalar(graph.dlm),
    };
    if !record.loss_total.is_finite() {
        return Err(ModelError::TrainingDiverged {
            step,
            total: record.loss_total,
            elm: record.loss_elm,
            dlm: record.loss_dlm,
            max_param_abs: weights.max_param_abs(),
        });
    }
    tape.backward(graph.total)?;
    tw.write_grads(&tape, weights);
    optimizer.step(|apply| weights.for_each_param_mut(apply));
    Ok(record)
}

/// Full pre-training loop over a tokenized corpus. Documents are prepared
/// sequences ([CLS] ... [SEP]); order is reshuffled each epoch from the
/// seeded stream. `on_record` sees every step, in order.
pub fn pretrain(
    weights: &mut TransformerWeights,
    corpus: &[Vec<u32>],
    cfg: &PretrainConfig,
    seed: u64,
    mut on_record: impl FnMut(&PretrainRecord),
) -> Result<Vec<PretrainRecord>> {
    cfg.validate()?;
    let usable: Vec<&Vec<u32>> = corpus
        .iter()
        .filter(|doc| doc.iter().any(|&t| !is_structural(t)))
        .collect();
    if usable.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        warmup_steps: (cfg.steps as f64 * cfg.warmup_fraction) as usize,
        total_steps: cfg.steps,
        ..Default::default()
    });

    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let doc = usable[order[cursor]];
            cursor += 1;
            batch.push(MaskedSample::generate(
                doc,
                cfg.alpha,
                cfg.beta,
                cfg.masking,
                weights.config.vocab_size,
                &mut rng,
            )?);
        }
        let record = pretrain_step(weights, &batch, cfg, &mut optimizer, step)?;
        on_record(&record);
        records.push(record);
    }
    if !weights.all_finite() {
        return Err(ModelError::TrainingDiverged {
            step: cfg.steps,
            total: f64::NAN,
            elm: f64::NAN,
            dlm: f64::NAN,
            max_param_abs: weights.max_param_abs(),
        });
    }
    Ok(records)
}
