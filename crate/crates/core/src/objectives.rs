//! Training objectives: relation discrimination (cross-entropy over the
//! summed-logit class distribution), entity discrimination (negative log
//! probability of each masked entity token given the context and the gold
//! relation), and their sum.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::backend::{Gradients, Graph, ModelBackend, Trainable, Var};
use crate::error::{Error, Result};
use crate::prompt::{EntityMaskedInstance, PromptInstance};
use crate::scoring::{class_word_weights, entity_token_distribution, score_classes, ClassScores};
use crate::verbalizer::{LabelWordSet, RelationLabel};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

static DEGENERATE: AtomicU64 = AtomicU64::new(0);

/// Number of times a gold probability was clamped to [`PROB_FLOOR`].
pub fn degenerate_count() -> u64 {
    DEGENERATE.load(Ordering::Relaxed)
}

fn neg_log(p: f64) -> f64 {
    if p < PROB_FLOOR {
        DEGENERATE.fetch_add(1, Ordering::Relaxed);
        log::warn!("gold probability {p:e} clamped to {PROB_FLOOR:e}");
        -PROB_FLOOR.ln()
    } else {
        -p.ln()
    }
}

/// Batch-mean losses. `total = l_r + lambda_e * l_e`, summed in that order;
/// with the default `lambda_e = 1` this is exactly `l_r + l_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_e: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_r.is_finite() && self.l_e.is_finite() && self.total.is_finite()
    }
}

/// `-ln p(gold)`.
pub fn relation_loss(scores: &ClassScores, gold: &RelationLabel) -> f64 {
    neg_log(scores.probs[gold.class_index])
}

/// Sum over masked positions of `-ln q(target)`.
pub fn entity_loss<B: ModelBackend + ?Sized>(instance: &EntityMaskedInstance, backend: &B) -> Result<f64> {
    if instance.masked_positions.is_empty() || instance.masked_positions.len() != instance.target_ids.len() {
        return Err(Error::EmptyBatch);
    }
    let mut loss = 0.0;
    for (&pos, &target) in instance.masked_positions.iter().zip(&instance.target_ids) {
        let q = entity_token_distribution(instance, pos, backend)?;
        loss += neg_log(q[target as usize]);
    }
    Ok(loss)
}

/// One training item. `entity` is `None` when entity discrimination is off.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub prompt: &'a PromptInstance,
    pub entity: Option<&'a EntityMaskedInstance>,
    pub gold: usize,
}

fn check_batch(batch: &[TrainItem], classes: &[LabelWordSet]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(item) = batch.iter().find(|i| i.gold >= classes.len()) {
        return Err(Error::UnknownLabel(format!("class index {}", item.gold)));
    }
    Ok(())
}

/// Forward-only batch loss through the inference path.
pub fn total_loss<B: ModelBackend + ?Sized>(
    batch: &[TrainItem],
    classes: &[LabelWordSet],
    backend: &B,
    lambda_e: f64,
) -> Result<LossBreakdown> {
    check_batch(batch, classes)?;
    let n = batch.len() as f64;
    let mut l_r = 0.0;
    let mut l_e = 0.0;
    for item in batch {
        let scores = score_classes(item.prompt, classes, backend)?;
        l_r += relation_loss(&scores, &classes[item.gold].label);
        if let Some(e) = item.entity {
            l_e += entity_loss(e, backend)?;
        }
    }
    let (l_r, l_e) = (l_r / n, l_e / n);
    Ok(LossBreakdown {
        l_r,
        l_e,
        total: l_r + lambda_e * l_e,
    })
}

/// Records the relation loss of one prompt on `g`.
pub fn relation_loss_node<'p, B: Trainable>(
    g: &mut Graph<'p>,
    backend: &'p B,
    prompt: &PromptInstance,
    class_weights: &[Vec<(usize, f64)>],
    gold: usize,
) -> Result<Var> {
    let hidden = backend.encode_graph(g, &prompt.token_ids)?;
    let h = g.gather(hidden, &[prompt.mask_position]);
    let emb = backend.output_embeddings(g);
    let w = g.combine_rows(emb, class_weights.to_vec());
    let logits = g.matmul_bt(h, w);
    Ok(g.softmax_xent(logits, &[gold]))
}

/// Summed token cross-entropy at `positions` of `token_ids`, with the
/// output bias included.
pub fn token_prediction_node<'p, B: Trainable>(
    g: &mut Graph<'p>,
    backend: &'p B,
    token_ids: &[u32],
    positions: &[usize],
    targets: &[u32],
) -> Result<Var> {
    let hidden = backend.encode_graph(g, token_ids)?;
    let h = g.gather(hidden, positions);
    let emb = backend.output_embeddings(g);
    let mut logits = g.matmul_bt(h, emb);
    if let Some(bias) = backend.output_bias(g) {
        logits = g.add_row(logits, bias);
    }
    let targets: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    Ok(g.softmax_xent(logits, &targets))
}

/// Batch loss and its gradient with respect to every backend parameter.
/// Per-example gradients are summed in batch order.
pub fn total_loss_and_grad<B: Trainable>(
    batch: &[TrainItem],
    classes: &[LabelWordSet],
    backend: &B,
    lambda_e: f64,
) -> Result<(LossBreakdown, Gradients)> {
    check_batch(batch, classes)?;
    let class_weights = classes
        .iter()
        .map(class_word_weights)
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let mut grads = backend.param_store().zero_grads();
    let mut l_r = 0.0;
    let mut l_e = 0.0;
    for item in batch {
        let mut g = Graph::new(backend.param_store());
        let lr = relation_loss_node(&mut g, backend, item.prompt, &class_weights, item.gold)?;
        l_r += g.scalar(lr);
        let mut root = lr;
        if let Some(e) = item.entity {
            if e.masked_positions.is_empty() {
                return Err(Error::EmptyBatch);
            }
            let le = token_prediction_node(&mut g, backend, &e.token_ids, &e.masked_positions, &e.target_ids)?;
            l_e += g.scalar(le);
            let weighted = g.scale(le, lambda_e);
            root = g.add(lr, weighted);
        }
        let root = g.scale(root, 1.0 / n);
        grads.add_scaled(&g.backward(root), 1.0);
    }
    let (l_r, l_e) = (l_r / n, l_e / n);
    Ok((
        LossBreakdown {
            l_r,
            l_e,
            total: l_r + lambda_e * l_e,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(i: usize) -> RelationLabel {
        RelationLabel {
            raw: format!("r{i}"),
            class_index: i,
        }
    }

    #[test]
    fn uniform_relation_loss_is_ln_c() {
        for c in [2usize, 3, 36, 42] {
            let scores = ClassScores::from_logits(vec![0.0; c]);
            assert!((relation_loss(&scores, &label(1)) - (c as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn certain_gold_has_zero_loss() {
        let scores = ClassScores {
            logits: vec![],
            probs: vec![0.0, 1.0],
            argmax: 1,
            raw_mass: None,
        };
        assert_eq!(relation_loss(&scores, &label(1)), 0.0);
    }

    #[test]
    fn hand_computed_relation_loss() {
        let scores = ClassScores {
            logits: vec![],
            probs: vec![0.7, 0.2, 0.1],
            argmax: 0,
            raw_mass: None,
        };
        assert!((relation_loss(&scores, &label(1)) - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn zero_gold_probability_is_clamped_and_counted() {
        let before = degenerate_count();
        let scores = ClassScores {
            logits: vec![],
            probs: vec![1.0, 0.0],
            argmax: 0,
            raw_mass: None,
        };
        let loss = relation_loss(&scores, &label(1));
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(degenerate_count() > before);
    }
}
