//! Class distributions at the mask position.
//!
//! Two forms are provided. The summed-logit form scores class `y` by
//! `w_y . h`, where `w_y` sums the output embeddings of the label words
//! (a word split into several units contributes the mean of their rows),
//! and normalizes with a softmax over classes. The marginal form sums
//! full-vocabulary probabilities of the label words and renormalizes.

use serde::{Deserialize, Serialize};

pub use crate::backend::MaskOutputs;
use crate::backend::tensor::{argmax, dot, softmax};
use crate::backend::{encode_with_mask, ModelBackend};
use crate::error::{Error, Result};
use crate::prompt::{EntityMaskedInstance, PromptInstance};
use crate::verbalizer::LabelWordSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    #[default]
    SummedLogit,
    Marginal,
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summed-logit" => Ok(ScoringMode::SummedLogit),
            "marginal" => Ok(ScoringMode::Marginal),
            _ => Err(Error::InvalidConfig(format!(
                "scoring must be `summed-logit` or `marginal`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub argmax: usize,
    /// Unnormalized label-word probability mass (marginal form only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_mass: Option<Vec<f64>>,
}

impl ClassScores {
    /// Softmax over per-class logits.
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        let argmax = argmax(&logits);
        ClassScores {
            logits,
            probs,
            argmax,
            raw_mass: None,
        }
    }
}

/// Exported prediction row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub probs: Vec<f64>,
    pub argmax: usize,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, scores: &ClassScores) -> Self {
        ScoreRecord {
            id: id.into(),
            probs: scores.probs.clone(),
            argmax: scores.argmax,
        }
    }
}

fn ensure_resolved(word_set: &LabelWordSet) -> Result<()> {
    if word_set.is_resolved() {
        Ok(())
    } else {
        Err(Error::UnresolvableWord(word_set.words.join(" ")))
    }
}

/// `(vocabulary id, weight)` pairs whose weighted output-embedding sum is
/// the class vector: every unit of a word gets `1 / units`.
pub fn class_word_weights(word_set: &LabelWordSet) -> Result<Vec<(usize, f64)>> {
    ensure_resolved(word_set)?;
    Ok(word_set
        .vocab_ids
        .iter()
        .flat_map(|units| {
            let w = 1.0 / units.len() as f64;
            units.iter().map(move |&id| (id as usize, w))
        })
        .collect())
}

/// The class vector `w_y` for one label-word set.
pub fn class_vector<B: ModelBackend + ?Sized>(word_set: &LabelWordSet, backend: &B) -> Result<Vec<f64>> {
    let d = backend.hidden_dim();
    let mut out = vec![0.0; d];
    for (id, w) in class_word_weights(word_set)? {
        let row = backend.output_embedding(id as u32)?;
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(row) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// `w_y . h` for one class. Output bias terms are not included.
pub fn class_logit<B: ModelBackend + ?Sized>(word_set: &LabelWordSet, backend: &B, hidden: &[f64]) -> Result<f64> {
    let w = class_vector(word_set, backend)?;
    if w.len() != hidden.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: hidden.len(),
        });
    }
    Ok(dot(&w, hidden))
}

/// Summed-logit class distribution for a prompt.
pub fn score_classes<B: ModelBackend + ?Sized>(
    instance: &PromptInstance,
    classes: &[LabelWordSet],
    backend: &B,
) -> Result<ClassScores> {
    let out = encode_with_mask(instance, backend)?;
    let h = out.hidden.row(0);
    let logits = classes
        .iter()
        .map(|ws| class_logit(ws, backend, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassScores::from_logits(logits))
}

/// Marginal label-word probability per class. A multi-unit word
/// contributes the mean probability of its units.
pub fn marginal_scores<B: ModelBackend + ?Sized>(
    instance: &PromptInstance,
    classes: &[LabelWordSet],
    backend: &B,
) -> Result<ClassScores> {
    let out = encode_with_mask(instance, backend)?;
    let p = softmax(out.vocab_logits.row(0));
    let raw = classes
        .iter()
        .map(|ws| {
            ensure_resolved(ws)?;
            Ok(ws
                .vocab_ids
                .iter()
                .map(|units| units.iter().map(|&id| p[id as usize]).sum::<f64>() / units.len() as f64)
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|m| m / total).collect();
    Ok(ClassScores {
        logits: raw.iter().map(|m| m.ln()).collect(),
        argmax: argmax(&probs),
        probs,
        raw_mass: Some(raw),
    })
}

pub fn score<B: ModelBackend + ?Sized>(
    mode: ScoringMode,
    instance: &PromptInstance,
    classes: &[LabelWordSet],
    backend: &B,
) -> Result<ClassScores> {
    match mode {
        ScoringMode::SummedLogit => score_classes(instance, classes, backend),
        ScoringMode::Marginal => marginal_scores(instance, classes, backend),
    }
}

/// Vocabulary distribution at one masked entity position.
pub fn entity_token_distribution<B: ModelBackend + ?Sized>(
    instance: &EntityMaskedInstance,
    position: usize,
    backend: &B,
) -> Result<Vec<f64>> {
    if !instance.masked_positions.contains(&position) {
        return Err(Error::PositionNotMasked(position));
    }
    let states = backend.encode(&instance.token_ids)?;
    Ok(softmax(&backend.vocab_logits(states.row(position))?))
}
