//! Masked-token pretraining for the toy encoder.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::optim::{Adam, AdamConfig};
use super::tensor::argmax;
use super::toy::{ToyMlm, ToyMlmConfig};
use super::vocab::Vocab;
use super::{ModelBackend, Trainable};
use crate::error::{Error, Result};
use crate::objectives::token_prediction_node;

/// Number of leading control tokens never chosen as random replacements.
const CONTROL_TOKENS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            steps: 500,
            batch_size: 32,
            mask_prob: 0.15,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Loss of each training batch.
    pub losses: Vec<f64>,
    /// Loss on a fixed probe batch before the first step.
    pub initial_loss: f64,
    /// Loss on the same probe batch after the last step.
    pub final_loss: f64,
}

/// A corpus sequence with some positions selected for prediction.
#[derive(Debug, Clone)]
struct MaskedSample {
    input: Vec<u32>,
    positions: Vec<usize>,
    targets: Vec<u32>,
}

fn wrap(seq: &[u32], vocab: &Vocab, max_len: usize) -> Vec<u32> {
    let sp = vocab.special();
    let keep = seq.len().min(max_len.saturating_sub(2));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(sp.cls);
    ids.extend_from_slice(&seq[..keep]);
    ids.push(sp.sep);
    ids
}

/// Selects positions with probability `mask_prob` (at least one) and
/// corrupts them. With `bert_mix` the usual 80/10/10 mask/random/keep
/// split is applied, otherwise every selected token becomes `[MASK]`.
fn mask_sequence<R: Rng>(ids: &[u32], vocab: &Vocab, mask_prob: f64, bert_mix: bool, rng: &mut R) -> MaskedSample {
    let sp = vocab.special();
    let candidates: Vec<usize> = (1..ids.len().saturating_sub(1)).collect();
    let mut positions: Vec<usize> = candidates.iter().copied().filter(|_| rng.gen_bool(mask_prob)).collect();
    if positions.is_empty() && !candidates.is_empty() {
        positions.push(*candidates.choose(rng).expect("non-empty"));
    }
    let targets: Vec<u32> = positions.iter().map(|&p| ids[p]).collect();
    let mut input = ids.to_vec();
    for &p in &positions {
        let roll: f64 = if bert_mix { rng.gen() } else { 0.0 };
        if roll < 0.8 {
            input[p] = sp.mask;
        } else if roll < 0.9 {
            input[p] = rng.gen_range(CONTROL_TOKENS..vocab.len() as u32);
        }
    }
    MaskedSample {
        input,
        positions,
        targets,
    }
}

fn check_corpus(corpus: &[Vec<u32>], vocab: &Vocab) -> Result<()> {
    if let Some(&bad) = corpus.iter().flatten().find(|&&id| id as usize >= vocab.len()) {
        return Err(Error::TokenOutOfRange(bad));
    }
    Ok(())
}

fn batch_loss(model: &ToyMlm, batch: &[MaskedSample], want_grad: bool) -> Result<(f64, Option<super::Gradients>)> {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = want_grad.then(|| model.param_store().zero_grads());
    for sample in batch.iter().filter(|s| !s.positions.is_empty()) {
        let mut g = Graph::new(model.param_store());
        let loss = token_prediction_node(&mut g, model, &sample.input, &sample.positions, &sample.targets)?;
        let scaled = g.scale(loss, 1.0 / (n * sample.positions.len() as f64));
        total += g.scalar(scaled);
        if let Some(grads) = grads.as_mut() {
            grads.add_scaled(&g.backward(scaled), 1.0);
        }
    }
    Ok((total, grads))
}

/// Trains a fresh toy encoder on `corpus` with random token masking.
///
/// Sequences are wrapped in `[CLS] ... [SEP]` and clipped to the model's
/// maximum length. Runs are reproducible for fixed `config.seed` and
/// `options.seed`.
pub fn pretrain_toy(
    corpus: &[Vec<u32>],
    vocab: Vocab,
    config: ToyMlmConfig,
    options: &PretrainOptions,
) -> Result<(ToyMlm, PretrainReport)> {
    let mut model = ToyMlm::new(config, vocab)?;
    check_corpus(corpus, model.vocab())?;
    let max_len = model.max_len();
    let wrapped: Vec<Vec<u32>> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| wrap(s, model.vocab(), max_len))
        .collect();
    if wrapped.is_empty() {
        return Err(Error::InvalidConfig("pretraining corpus is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let probe: Vec<MaskedSample> = wrapped
        .iter()
        .take(64)
        .map(|s| mask_sequence(s, model.vocab(), options.mask_prob, false, &mut rng))
        .collect();
    let initial_loss = batch_loss(&model, &probe, false)?.0;

    let mut adam = Adam::new(options.adam, model.param_store());
    let mut order: Vec<usize> = (0..wrapped.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(options.steps);
    for step in 0..options.steps {
        let mut batch = Vec::with_capacity(options.batch_size);
        while batch.len() < options.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(mask_sequence(&wrapped[order[cursor]], model.vocab(), options.mask_prob, true, &mut rng));
            cursor += 1;
        }
        let (loss, grads) = batch_loss(&model, &batch, true)?;
        let grads = grads.expect("gradients requested");
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                l_r: loss,
                l_e: 0.0,
            });
        }
        adam.step(model.param_store_mut(), &grads);
        losses.push(loss);
    }
    let final_loss = batch_loss(&model, &probe, false)?.0;
    log::info!(
        "pretrained {} steps: probe loss {initial_loss:.4} -> {final_loss:.4}",
        options.steps
    );
    Ok((
        model,
        PretrainReport {
            losses,
            initial_loss,
            final_loss,
        },
    ))
}

/// Fraction of masked positions whose argmax prediction is the original
/// token. Every selected position is replaced by `[MASK]`.
pub fn masked_token_accuracy<B: ModelBackend + ?Sized>(
    backend: &B,
    corpus: &[Vec<u32>],
    mask_prob: f64,
    seed: u64,
) -> Result<f64> {
    let vocab = backend.vocab();
    check_corpus(corpus, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    let mut total = 0usize;
    for seq in corpus.iter().filter(|s| !s.is_empty()) {
        let ids = wrap(seq, vocab, backend.max_len());
        let sample = mask_sequence(&ids, vocab, mask_prob, false, &mut rng);
        let states = backend.encode(&sample.input)?;
        for (&p, &t) in sample.positions.iter().zip(&sample.targets) {
            let logits = backend.vocab_logits(states.row(p))?;
            correct += usize::from(argmax(&logits) == t as usize);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}
