//! Masked language model backends.
//!
//! [`ModelBackend`] is the inference surface used by scoring; [`Trainable`]
//! adds the autodiff hooks the objectives and optimizers need. The built-in
//! [`ToyMlm`] implements both. An adapter for an external pretrained encoder
//! implements the same traits.

pub mod checkpoint;
pub mod finetune;
pub mod graph;
pub mod optim;
pub mod pretrain;
pub mod tensor;
pub mod toy;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use finetune::finetune_step;
pub use graph::{Gradients, Graph, ParamId, ParamStore, Var};
pub use optim::{Adam, AdamConfig};
pub use pretrain::{masked_token_accuracy, pretrain_toy, PretrainOptions, PretrainReport};
pub use tensor::Matrix;
pub use toy::{ToyMlm, ToyMlmConfig};
pub use vocab::{SpecialIds, Vocab};

pub trait ModelBackend: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Width `d` of the hidden vectors.
    fn hidden_dim(&self) -> usize;

    fn max_len(&self) -> usize;

    /// Hidden vectors for every position, evaluation mode.
    fn encode(&self, token_ids: &[u32]) -> Result<Matrix>;

    /// Scores over the vocabulary for one hidden vector, bias included.
    fn vocab_logits(&self, hidden: &[f64]) -> Result<Vec<f64>>;

    /// Output-embedding row of a vocabulary entry. Its dot product with a
    /// hidden vector equals the bias-free part of [`Self::vocab_logits`].
    fn output_embedding(&self, id: u32) -> Result<&[f64]>;

    /// All parameters flattened in a fixed order.
    fn parameters(&self) -> Vec<f64>;

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()>;
}

/// A backend whose forward pass can be recorded on a [`Graph`].
pub trait Trainable: ModelBackend + Clone {
    fn param_store(&self) -> &ParamStore;

    fn param_store_mut(&mut self) -> &mut ParamStore;

    /// Records the encoder on `g` and returns the `n x d` hidden states.
    fn encode_graph<'p>(&'p self, g: &mut Graph<'p>, token_ids: &[u32]) -> Result<Var>;

    /// The `|V| x d` output-embedding matrix as a graph node.
    fn output_embeddings(&self, g: &mut Graph) -> Var;

    /// Output-layer bias (`1 x |V|`), if the backend has one.
    fn output_bias(&self, g: &mut Graph) -> Option<Var>;
}

/// A token sequence with a set of positions whose outputs are queried.
pub trait MaskedSequence {
    fn token_ids(&self) -> &[u32];
    fn query_positions(&self) -> Vec<usize>;
}

/// Encoder outputs at the queried positions of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskOutputs {
    pub positions: Vec<usize>,
    /// One row per queried position.
    pub hidden: Matrix,
    /// One row per queried position, `|V|` columns.
    pub vocab_logits: Matrix,
}

/// Runs the encoder and collects hidden vectors and vocabulary logits at
/// the sequence's query positions.
pub fn encode_with_mask<S, B>(instance: &S, backend: &B) -> Result<MaskOutputs>
where
    S: MaskedSequence + ?Sized,
    B: ModelBackend + ?Sized,
{
    let ids = instance.token_ids();
    if ids.len() > backend.max_len() {
        return Err(Error::LengthExceeded {
            len: ids.len(),
            max_len: backend.max_len(),
        });
    }
    let positions = instance.query_positions();
    let states = backend.encode(ids)?;
    let d = backend.hidden_dim();
    let v = backend.vocab().len();
    let mut hidden = Matrix::zeros(positions.len(), d);
    let mut vocab_logits = Matrix::zeros(positions.len(), v);
    for (row, &p) in positions.iter().enumerate() {
        hidden.row_mut(row).copy_from_slice(states.row(p));
        let logits = backend.vocab_logits(states.row(p))?;
        vocab_logits.row_mut(row).copy_from_slice(&logits);
    }
    Ok(MaskOutputs {
        positions,
        hidden,
        vocab_logits,
    })
}

/// Which backend a run uses: the built-in toy model or a named adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    Toy,
    External(String),
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackendKind::Toy),
            _ => match s.strip_prefix("external:") {
                Some(name) if !name.is_empty() => Ok(BackendKind::External(name.to_string())),
                _ => Err(Error::InvalidConfig(format!(
                    "backend must be `toy` or `external:<adapter>`, got `{s}`"
                ))),
            },
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendKind::Toy => f.write_str("toy"),
            BackendKind::External(name) => write!(f, "external:{name}"),
        }
    }
}
