//! Prompt-based relation classification with a masked language model.
//!
//! Relation labels are decomposed into label words ([`verbalizer`]), each
//! example is rendered as a cloze prompt with one mask slot ([`prompt`]),
//! and classes are scored from the encoder's hidden state at the mask
//! ([`scoring`]). Training combines relation discrimination with an
//! auxiliary entity-prediction loss ([`objectives`]). The [`harness`] runs
//! seeded few-shot experiments; [`backend`] provides a small trainable
//! transformer so everything runs on a CPU.

pub mod backend;
pub mod data;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod prompt;
pub mod scoring;
pub mod synth;
pub mod verbalizer;

pub use backend::{ModelBackend, ToyMlm, ToyMlmConfig, Trainable, Vocab};
pub use data::Dataset;
pub use error::{Error, Result};
pub use objectives::{entity_loss, relation_loss, total_loss, LossBreakdown, TrainItem};
pub use prompt::{render_entity_masked, render_prompt, EntityMaskedInstance, Example, PromptInstance, PromptTemplate, TemplateForm};
pub use scoring::{marginal_scores, score_classes, ClassScores, ScoringMode};
pub use verbalizer::{build_schema, decompose, LabelWordSet, RelationLabel, RelationSchema, RuleConfig};
