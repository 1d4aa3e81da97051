//! Stage losses over lexicon representations.
//!
//! Stages 1 and 2 are plain contrastive: negative log likelihood of the
//! positive under a softmax over dot products, plus the sparsity pressure.
//! Stage 3 distills a frozen teacher distribution (softmax of its raw
//! scores at temperature 1) into the student via KL(teacher || student),
//! keeps a gamma-weighted contrastive term, plus the same pressure.

use lexret_autodiff::optim::Adam;
use lexret_autodiff::{Tape, TensorId};
use lexret_model::repr::{flops_regularizer, lexicon_representation};
use lexret_model::transformer::TapedWeights;
use lexret_model::TransformerWeights;

use crate::error::{FinetuneError, Result};
use crate::group::{QueryGroup, StageConfig};

/// Separately logged components: `total = distillation + gamma *
/// contrastive + flops` for stage 3, `total = contrastive + flops`
/// otherwise. Every component is non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLossParts {
    pub total: f64,
    pub distillation: f64,
    pub contrastive: f64,
    pub flops: f64,
}

struct GroupGraph {
    scores: TensorId,
    query_repr: TensorId,
    doc_reprs: Vec<TensorId>,
}

fn group_graph(tape: &mut Tape, tw: &TapedWeights, group: &QueryGroup) -> Result<GroupGraph> {
    group.validate()?;
    let query_repr = lexicon_representation(tape, tw, &group.query)?;
    let mut doc_reprs = Vec::with_capacity(group.num_candidates());
    doc_reprs.push(lexicon_representation(tape, tw, &group.positive)?);
    for negative in &group.negatives {
        doc_reprs.push(lexicon_representation(tape, tw, negative)?);
    }
    let dots: Vec<TensorId> = doc_reprs
        .iter()
        .map(|&d| tape.dot(query_repr, d))
        .collect::<std::result::Result<_, _>>()?;
    let scores = tape.stack_scalars(&dots)?;
    Ok(GroupGraph { scores, query_repr, doc_reprs })
}

/// Likelihood of each candidate (positive first) under the current encoder:
/// softmax over the query-document dot products.
pub fn contrastive_distribution(
    weights: &TransformerWeights,
    group: &QueryGroup,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, weights);
    let graph = group_graph(&mut tape, &tw, group)?;
    let probs = tape.softmax(graph.scores)?;
    Ok(tape.value(probs).to_vec())
}

/// Softmax of raw teacher scores at temperature 1.
fn teacher_distribution(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

struct BatchGraph {
    total: TensorId,
    distillation: TensorId,
    contrastive: TensorId,
    flops: TensorId,
}

fn batch_graph(
    tape: &mut Tape,
    tw: &TapedWeights,
    groups: &[QueryGroup],
    cfg: &StageConfig,
) -> Result<BatchGraph> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(FinetuneError::NoTrainableGroups);
    }
    let mut ce_terms = Vec::with_capacity(groups.len());
    let mut kl_terms = Vec::with_capacity(groups.len());
    let mut query_reprs = Vec::with_capacity(groups.len());
    let mut doc_reprs = Vec::new();
    for group in groups {
        let graph = group_graph(tape, tw, group)?;
        ce_terms.push(tape.cross_entropy_index(graph.scores, 0)?);
        if cfg.stage == 3 {
            let raw = group.teacher_scores.as_ref().ok_or_else(|| {
                FinetuneError::MissingTeacherScore {
                    query_id: group.query_id.clone(),
                    doc_id: group.positive_id.clone(),
                }
            })?;
            let teacher = teacher_distribution(raw);
            kl_terms.push(tape.kl_from_teacher(graph.scores, &teacher)?);
        }
        query_reprs.push(graph.query_repr);
        doc_reprs.extend(graph.doc_reprs);
    }

    let contrastive = mean_of(tape, &ce_terms)?;
    let distillation = if kl_terms.is_empty() {
        tape.constant_scalar(0.0)
    } else {
        mean_of(tape, &kl_terms)?
    };

    // Sparsity pressure per mini-batch on the real-valued representations,
    // query side and document side summed under their weights.
    let query_lambda = cfg.query_lambda.unwrap_or(cfg.lambda);
    let flops_q = flops_regularizer(tape, &query_reprs)?;
    let flops_d = flops_regularizer(tape, &doc_reprs)?;
    let fq = tape.scale(flops_q, query_lambda);
    let fd = tape.scale(flops_d, cfg.lambda);
    let flops = tape.add(fq, fd)?;

    let main = if cfg.stage == 3 {
        let weighted_ce = tape.scale(contrastive, cfg.gamma);
        tape.add(distillation, weighted_ce)?
    } else {
        contrastive
    };
    let total = tape.add(main, flops)?;
    Ok(BatchGraph { total, distillation, contrastive, flops })
}

fn mean_of(tape: &mut Tape, terms: &[TensorId]) -> Result<TensorId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

/// Forward-only stage loss of a single group (the mini-batch of one).
pub fn stage_loss(
    weights: &TransformerWeights,
    group: &QueryGroup,
    cfg: &StageConfig,
) -> Result<StageLossParts> {
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, weights);
    let graph = batch_graph(&mut tape, &tw, std::slice::from_ref(group), cfg)?;
    Ok(parts(&tape, &graph))
}

fn parts(tape: &Tape, graph: &BatchGraph) -> StageLossParts {
    StageLossParts {
        total: tape.scalar(graph.total),
        distillation: tape.scalar(graph.distillation),
        contrastive: tape.scalar(graph.contrastive),
        flops: tape.scalar(graph.flops),
    }
}

/// One optimizer step over a batch of groups. Returns the logged parts.
pub fn stage_step(
    weights: &mut TransformerWeights,
    groups: &[QueryGroup],
    cfg: &StageConfig,
    optimizer: &mut Adam,
) -> Result<StageLossParts> {
    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, weights);
    let graph = batch_graph(&mut tape, &tw, groups, cfg)?;
    let out = parts(&tape, &graph);
    tape.backward(graph.total)?;
    tw.write_grads(&tape, weights);
    optimizer.step(|apply| weights.for_each_param_mut(apply));
    Ok(out)
}

/// Loss-only evaluation of a batch; the finite-difference harness re-runs
/// this closure at perturbed parameters.
pub fn batch_loss_value(
    weights: &TransformerWeights,
    groups: &[QueryGroup],
    cfg: &StageConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let tw = TapedWeights::register_frozen(&mut tape, weights);
    let graph = batch_graph(&mut tape, &tw, groups, cfg)?;
    Ok(tape.scalar(graph.total))
}

/// Analytic gradients of the batch loss by parameter name.
pub fn batch_loss_grads(
    weights: &TransformerWeights,
    groups: &[QueryGroup],
    cfg: &StageConfig,
) -> Result<std::collections::BTreeMap<String, Vec<f64>>> {
    let mut scratch = weights.clone();
    let mut tape = Tape::new();
    let tw = TapedWeights::register(&mut tape, &scratch);
    let graph = batch_graph(&mut tape, &tw, groups, cfg)?;
    tape.backward(graph.total)?;
    tw.write_grads(&tape, &mut scratch);
    let mut out = std::collections::BTreeMap::new();
    scratch.for_each_param(|name, t| {
        out.insert(
            name.to_string(),
            t.grad.clone().unwrap_or_else(|| vec![0.0; t.numel()]),
        );
    });
    Ok(out)
}
