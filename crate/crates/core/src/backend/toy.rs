use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, ParamId, ParamStore, Var};
use super::tensor::{dot, Matrix};
use super::vocab::Vocab;
use super::{ModelBackend, Trainable};
use crate::error::{Error, Result};

const EMBED_STD: f64 = 0.1;

/// Shape and seed of the built-in toy encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyMlmConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; `0` means `4 * d`.
    pub ffn: usize,
    /// Upper bound on the vocabulary size.
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ToyMlmConfig {
    fn default() -> Self {
        ToyMlmConfig {
            d: 32,
            layers: 2,
            heads: 2,
            ffn: 0,
            vocab_size: 512,
            max_len: 128,
            seed: 0,
        }
    }
}

impl ToyMlmConfig {
    pub fn ffn_width(&self) -> usize {
        if self.ffn == 0 {
            4 * self.d
        } else {
            self.ffn
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.layers == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig(
                "d, heads, layers and max_len must be positive".into(),
            ));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d = {} is not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Pre-norm transformer encoder with learned absolute positions and an
/// output layer tied to the input embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMlm {
    config: ToyMlmConfig,
    vocab: Vocab,
    params: ParamStore,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerParams>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    out_bias: ParamId,
}

impl ToyMlm {
    /// Freshly initialized model seeded by `config.seed`.
    pub fn new(config: ToyMlmConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if vocab.len() > config.vocab_size {
            return Err(Error::VocabOverflow {
                needed: vocab.len(),
                limit: config.vocab_size,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, f, v) = (config.d, config.ffn_width(), vocab.len());
        let mut params = ParamStore::new();
        let tok_emb = params.add("tok_emb", Matrix::randn(v, d, EMBED_STD, &mut rng));
        let pos_emb = params.add("pos_emb", Matrix::randn(config.max_len, d, EMBED_STD, &mut rng));
        let mut linear = |params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| {
            let std = 1.0 / (fan_in as f64).sqrt();
            let w = params.add(format!("{name}.w"), Matrix::randn(fan_in, fan_out, std, &mut rng));
            let b = params.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
            (w, b)
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let ln1_g = params.add(format!("l{l}.ln1.g"), Matrix::filled(1, d, 1.0));
            let ln1_b = params.add(format!("l{l}.ln1.b"), Matrix::zeros(1, d));
            let (wq, bq) = linear(&mut params, &format!("l{l}.q"), d, d);
            let (wk, bk) = linear(&mut params, &format!("l{l}.k"), d, d);
            let (wv, bv) = linear(&mut params, &format!("l{l}.v"), d, d);
            let (wo, bo) = linear(&mut params, &format!("l{l}.o"), d, d);
            let ln2_g = params.add(format!("l{l}.ln2.g"), Matrix::filled(1, d, 1.0));
            let ln2_b = params.add(format!("l{l}.ln2.b"), Matrix::zeros(1, d));
            let (w1, b1) = linear(&mut params, &format!("l{l}.ff1"), d, f);
            let (w2, b2) = linear(&mut params, &format!("l{l}.ff2"), f, d);
            layers.push(LayerParams {
                ln1_g,
                ln1_b,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_g,
                ln2_b,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let lnf_g = params.add("lnf.g", Matrix::filled(1, d, 1.0));
        let lnf_b = params.add("lnf.b", Matrix::zeros(1, d));
        let out_bias = params.add("out.bias", Matrix::zeros(1, v));
        Ok(ToyMlm {
            config,
            vocab,
            params,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            out_bias,
        })
    }

    pub fn config(&self) -> &ToyMlmConfig {
        &self.config
    }

    /// Appends tokens to the vocabulary (for example entity markers an
    /// existing checkpoint lacks). New embedding rows are drawn from a
    /// generator seeded with `seed`; returns the number of tokens added.
    pub fn add_tokens<S: AsRef<str>>(&mut self, tokens: &[S], seed: u64) -> Result<usize> {
        let mut vocab = self.vocab.clone();
        for t in tokens {
            vocab.push(t.as_ref());
        }
        let added = vocab.len() - self.vocab.len();
        if added == 0 {
            return Ok(0);
        }
        if vocab.len() > self.config.vocab_size {
            return Err(Error::VocabOverflow {
                needed: vocab.len(),
                limit: self.config.vocab_size,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh = Matrix::randn(added, self.config.d, EMBED_STD, &mut rng);
        let emb = self.params.get_mut(self.tok_emb);
        emb.data.extend_from_slice(&fresh.data);
        emb.rows += added;
        let bias = self.params.get_mut(self.out_bias);
        bias.data.extend(std::iter::repeat_n(0.0, added));
        bias.cols += added;
        self.vocab = vocab;
        Ok(added)
    }

    fn check_ids(&self, token_ids: &[u32]) -> Result<()> {
        if token_ids.len() > self.config.max_len {
            return Err(Error::LengthExceeded {
                len: token_ids.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(&bad) = token_ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
            return Err(Error::TokenOutOfRange(bad));
        }
        Ok(())
    }

    /// Parameter id of the output bias.
    pub fn output_bias_id(&self) -> ParamId {
        self.out_bias
    }

    pub fn token_embedding_id(&self) -> ParamId {
        self.tok_emb
    }
}

impl ModelBackend for ToyMlm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn hidden_dim(&self) -> usize {
        self.config.d
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn encode(&self, token_ids: &[u32]) -> Result<Matrix> {
        let mut g = Graph::new(&self.params);
        let h = self.encode_graph(&mut g, token_ids)?;
        Ok(g.value(h).clone())
    }

    fn vocab_logits(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        if hidden.len() != self.config.d {
            return Err(Error::DimensionMismatch {
                expected: self.config.d,
                found: hidden.len(),
            });
        }
        let emb = self.params.get(self.tok_emb);
        let bias = self.params.get(self.out_bias);
        Ok((0..emb.rows)
            .map(|w| dot(emb.row(w), hidden) + bias.data[w])
            .collect())
    }

    fn output_embedding(&self, id: u32) -> Result<&[f64]> {
        let emb = self.params.get(self.tok_emb);
        if id as usize >= emb.rows {
            return Err(Error::TokenOutOfRange(id));
        }
        Ok(emb.row(id as usize))
    }

    fn parameters(&self) -> Vec<f64> {
        self.params.to_flat()
    }

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.params.numel();
        if self.params.set_flat(flat) {
            Ok(())
        } else {
            Err(Error::ParameterCount {
                expected,
                found: flat.len(),
            })
        }
    }
}

impl Trainable for ToyMlm {
    fn param_store(&self) -> &ParamStore {
        &self.params
    }

    fn param_store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn encode_graph<'p>(&'p self, g: &mut Graph<'p>, token_ids: &[u32]) -> Result<Var> {
        self.check_ids(token_ids)?;
        let n = token_ids.len();
        let pad = self.vocab.special().pad;
        let key_mask: Vec<bool> = token_ids.iter().map(|&id| id != pad).collect();
        let rows: Vec<usize> = token_ids.iter().map(|&id| id as usize).collect();
        let positions: Vec<usize> = (0..n).collect();

        let tok = g.param(self.tok_emb);
        let pos = g.param(self.pos_emb);
        let te = g.gather(tok, &rows);
        let pe = g.gather(pos, &positions);
        let mut x = g.add(te, pe);
        for layer in &self.layers {
            let (ln_g, ln_b) = (g.param(layer.ln1_g), g.param(layer.ln1_b));
            let h = g.layer_norm(x, ln_g, ln_b);
            let proj = |g: &mut Graph<'p>, input: Var, w: ParamId, b: ParamId| {
                let wv = g.param(w);
                let bv = g.param(b);
                let m = g.matmul(input, wv);
                g.add_row(m, bv)
            };
            let q = proj(g, h, layer.wq, layer.bq);
            let k = proj(g, h, layer.wk, layer.bk);
            let v = proj(g, h, layer.wv, layer.bv);
            let a = g.attention(q, k, v, self.config.heads, &key_mask);
            let o = proj(g, a, layer.wo, layer.bo);
            x = g.add(x, o);

            let (ln_g, ln_b) = (g.param(layer.ln2_g), g.param(layer.ln2_b));
            let h = g.layer_norm(x, ln_g, ln_b);
            let f = proj(g, h, layer.w1, layer.b1);
            let f = g.gelu(f);
            let f = proj(g, f, layer.w2, layer.b2);
            x = g.add(x, f);
        }
        let (ln_g, ln_b) = (g.param(self.lnf_g), g.param(self.lnf_b));
        Ok(g.layer_norm(x, ln_g, ln_b))
    }

    fn output_embeddings(&self, g: &mut Graph) -> Var {
        g.param(self.tok_emb)
    }

    fn output_bias(&self, g: &mut Graph) -> Option<Var> {
        Some(g.param(self.out_bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> ToyMlm {
        let vocab = Vocab::new(["a", "b", "c", "d"]);
        let config = ToyMlmConfig {
            d: 8,
            layers: 1,
            heads: 2,
            max_len: 12,
            seed,
            ..ToyMlmConfig::default()
        };
        ToyMlm::new(config, vocab).unwrap()
    }

    #[test]
    fn hidden_width_is_d() {
        let m = model(1);
        let h = m.encode(&[2, 5, 6, 3]).unwrap();
        assert_eq!(h.shape(), (4, 8));
    }

    #[test]
    fn encode_is_deterministic() {
        let m = model(1);
        assert_eq!(m.encode(&[2, 5, 4, 3]).unwrap(), m.encode(&[2, 5, 4, 3]).unwrap());
        assert_eq!(model(7), model(7));
        assert_ne!(model(7).parameters(), model(8).parameters());
    }

    #[test]
    fn heads_must_divide_width() {
        let config = ToyMlmConfig {
            d: 10,
            heads: 3,
            ..ToyMlmConfig::default()
        };
        assert!(matches!(
            ToyMlm::new(config, Vocab::new(["a"])),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn vocab_limit_is_enforced() {
        let config = ToyMlmConfig {
            vocab_size: 6,
            ..ToyMlmConfig::default()
        };
        let err = ToyMlm::new(config, Vocab::new(["a", "b"])).unwrap_err();
        assert!(matches!(err, Error::VocabOverflow { needed: 7, limit: 6 }));
    }

    #[test]
    fn too_long_input_is_rejected() {
        let m = model(1);
        assert!(matches!(
            m.encode(&[5; 13]),
            Err(Error::LengthExceeded { len: 13, max_len: 12 })
        ));
    }

    #[test]
    fn added_tokens_get_seeded_rows() {
        let mut a = model(1);
        let mut b = model(1);
        assert_eq!(a.add_tokens(&["[E1]", "[/E1]"], 3).unwrap(), 2);
        b.add_tokens(&["[E1]", "[/E1]"], 3).unwrap();
        assert_eq!(a, b);
        let id = a.vocab().id("[E1]").unwrap();
        assert_eq!(a.output_embedding(id).unwrap().len(), 8);
        assert_eq!(a.vocab_logits(&[0.0; 8]).unwrap().len(), a.vocab().len());
        assert_eq!(a.add_tokens(&["[E1]"], 3).unwrap(), 0);
    }

    #[test]
    fn logits_split_into_embedding_dot_plus_bias() {
        let mut m = model(2);
        let bias = m.output_bias_id();
        m.param_store_mut().get_mut(bias).data[5] = 0.75;
        let h = m.encode(&[2, 5, 4, 3]).unwrap();
        let logits = m.vocab_logits(h.row(2)).unwrap();
        for w in 0..m.vocab().len() as u32 {
            let bias_free = dot(m.output_embedding(w).unwrap(), h.row(2));
            let b = if w == 5 { 0.75 } else { 0.0 };
            assert!((logits[w as usize] - b - bias_free).abs() < 1e-12);
        }
    }
}
