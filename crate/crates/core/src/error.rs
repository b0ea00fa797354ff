use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // verbalizer
    #[error("label `{0}` decomposes to an empty word set")]
    EmptyDecomposition(String),
    #[error("labels `{first}` and `{second}` decompose to the same word set {words:?}")]
    DuplicateWordSet {
        first: String,
        second: String,
        words: Vec<String>,
    },
    #[error("label word `{0}` has no vocabulary units")]
    UnresolvableWord(String),
    #[error("duplicate relation label `{0}`")]
    DuplicateLabel(String),
    #[error("relation schema needs at least one label")]
    EmptySchema,
    #[error("invalid relation label `{0}`: must be non-empty without whitespace")]
    InvalidLabel(String),
    #[error("unknown relation label `{0}`")]
    UnknownLabel(String),

    // prompt construction
    #[error("template needs {needed} tokens but the length budget is {budget}")]
    TemplateOverflow { needed: usize, budget: usize },
    #[error("left truncation of `{0}` would cut an entity span")]
    SpanLost(String),
    #[error("invalid entity spans in example `{id}`: {reason}")]
    InvalidSpan { id: String, reason: String },

    // scoring / backend
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("position {0} is not a masked entity position")]
    PositionNotMasked(usize),
    #[error("sequence of length {len} exceeds backend max length {max_len}")]
    LengthExceeded { len: usize, max_len: usize },
    #[error("vocabulary of {needed} entries exceeds configured size {limit}")]
    VocabOverflow { needed: usize, limit: usize },
    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}: l_r={l_r}, l_e={l_e}")]
    NonFiniteLoss { step: usize, l_r: f64, l_e: f64 },
    #[error("parameter vector has {found} entries, model expects {expected}")]
    ParameterCount { expected: usize, found: usize },

    // objectives
    #[error("batch is empty")]
    EmptyBatch,

    // harness
    #[error("class `{label}` has {available} training instances, {k} requested")]
    InsufficientClassInstances {
        label: String,
        available: usize,
        k: usize,
    },
    #[error("every grid point failed to train")]
    AllPointsFailed,
    #[error("hyper-parameter grid is empty")]
    EmptyGrid,
    #[error("length mismatch: {predictions} predictions vs {golds} golds")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("experiment failed after {completed} completed splits: {source}")]
    Experiment {
        completed: usize,
        partial: Box<crate::harness::ExperimentReport>,
        #[source]
        source: Box<Error>,
    },

    // ingestion
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown example id `{0}`")]
    UnknownExample(String),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("entity `{entity}` not found in dialogue `{id}`")]
    EntityNotFound { id: String, entity: String },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyDecomposition(_) => "empty_decomposition",
            Error::DuplicateWordSet { .. } => "duplicate_word_set",
            Error::UnresolvableWord(_) => "unresolvable_word",
            Error::DuplicateLabel(_) => "duplicate_label",
            Error::EmptySchema => "empty_schema",
            Error::InvalidLabel(_) => "invalid_label",
            Error::UnknownLabel(_) => "unknown_label",
            Error::TemplateOverflow { .. } => "template_overflow",
            Error::SpanLost(_) => "span_lost",
            Error::InvalidSpan { .. } => "invalid_span",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::PositionNotMasked(_) => "position_not_masked",
            Error::LengthExceeded { .. } => "length_exceeded",
            Error::VocabOverflow { .. } => "vocab_overflow",
            Error::TokenOutOfRange(_) => "token_out_of_range",
            Error::InvalidConfig(_) => "invalid_config",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::ParameterCount { .. } => "parameter_count",
            Error::EmptyBatch => "empty_batch",
            Error::InsufficientClassInstances { .. } => "insufficient_class_instances",
            Error::AllPointsFailed => "all_points_failed",
            Error::EmptyGrid => "empty_grid",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Experiment { .. } => "experiment",
            Error::Record { .. } => "record",
            Error::UnknownExample(_) => "unknown_example",
            Error::DuplicateId(_) => "duplicate_id",
            Error::EntityNotFound { .. } => "entity_not_found",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
