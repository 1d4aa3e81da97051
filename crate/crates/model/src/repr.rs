//! Lexicon-weighting representation for retrieval: rectified LM logits,
//! max-pooled over content positions, saturated by log1p. Queries and
//! documents go through the identical path.

use lexret_autodiff::{Tape, TensorId};
use lexret_sparse::SparseLexiconVector;

use crate::error::{ModelError, Result};
use crate::pretrain::pooling_positions;
use crate::transformer::{encode, lm_logits, TapedWeights};
use crate::vocab::prepare_sequence;
use crate::weights::TransformerWeights;

/// Saturated pooled weights from LM logits: `log1p(max_pool(relu(logits)))`
/// over the included positions; shape [vocab], all entries >= 0.
pub fn saturated_weights(
    tape: &mut Tape,
    logits: TensorId,
    included_positions: &[usize],
) -> Result<TensorId> {
    let rectified = tape.relu(logits);
    let pooled = tape.max_pool_rows(rectified, included_positions)?;
    Ok(tape.log1p(pooled))
}

/// In-graph dense representation of a text: prepares `[CLS] x [SEP]`,
/// encodes, projects through the encoder head, saturates. Differentiable;
/// the contrastive losses dot these vectors directly.
pub fn lexicon_representation(
    tape: &mut Tape,
    tw: &TapedWeights,
    content: &[u32],
) -> Result<TensorId> {
    if content.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let sequence = prepare_sequence(content, tw.config.max_sequence_length);
    let all_valid = vec![true; sequence.len()];
    let hidden = encode(tape, tw, &sequence, &all_valid, None)?;
    let logits = lm_logits(tape, tw, &tw.enc_head, hidden)?;
    let included = pooling_positions(&sequence);
    if included.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    saturated_weights(tape, logits, &included)
}

/// Inference: encode one text into its sparse lexicon vector, dropping the
/// zeros that `relu` produced.
pub fn encode_lexicon(
    weights: &TransformerWeights,
    content: &[u32],
) -> Result<SparseLexiconVector> {
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, weights);
    let dense = lexicon_representation(&mut tape, &tw, content)?;
    Ok(SparseLexiconVector::from_dense(tape.value(dense)))
}

/// Sparsity pressure over a batch of dense vocabulary-space rows: the sum
/// of squared per-term mean activations. Differentiable w.r.t. every row.
pub fn flops_regularizer(tape: &mut Tape, rows: &[TensorId]) -> Result<TensorId> {
    if rows.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let batch = tape.stack_rows(rows)?;
    Ok(tape.squared_column_means(batch)?)
}
