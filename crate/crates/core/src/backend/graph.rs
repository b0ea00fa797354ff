//! A small reverse-mode autodiff tape over dense matrices.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only; parameter leaves refer
//! to the store by id and are never copied. [`Graph::backward`] returns
//! gradients shaped like the store.

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, log_sum_exp, Matrix};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of parameter matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.numel());
        for v in &self.values {
            flat.extend_from_slice(&v.data);
        }
        flat
    }

    /// Overwrites all parameters from a flat vector in store order.
    pub fn set_flat(&mut self, flat: &[f64]) -> bool {
        if flat.len() != self.numel() {
            return false;
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        true
    }

    /// Reads or writes a single scalar addressed by its flat index.
    pub fn flat_mut(&mut self, mut index: usize) -> &mut f64 {
        for v in &mut self.values {
            if index < v.len() {
                return &mut v.data[index];
            }
            index -= v.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(
            self.values
                .iter()
                .map(|v| Matrix::zeros(v.rows, v.cols))
                .collect(),
        )
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Matrix>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += factor * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.0 {
            m.scale(factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|m| m.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Matrix::is_finite)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|m| m.data.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Input,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    Combine {
        table: Var,
        weights: Vec<Vec<(usize, f64)>>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Matrix>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    /// The single entry of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Matrix::zeros(0, 0), Op::Param(id), true)
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul inner dimensions");
        let mut out = Matrix::zeros(av.rows, bv.cols);
        gemm(av.rows, av.cols, bv.cols, 1.0, &av.data, false, &bv.data, false, 0.0, &mut out.data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_bt inner dimensions");
        let mut out = Matrix::zeros(av.rows, bv.rows);
        gemm(av.rows, av.cols, bv.rows, 1.0, &av.data, false, &bv.data, true, 0.0, &mut out.data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shapes");
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let mut out = self.value(x).clone();
        let b = self.value(bias);
        assert_eq!((1, out.cols), b.shape(), "bias shape");
        for r in 0..out.rows {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddRow(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale(factor);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, factor), ng)
    }

    /// Selects rows of `table` (embedding lookup or position selection).
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(rows.len(), t.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            ng,
        )
    }

    /// Output row `i` is `sum_j w_ij * table[r_ij]` for the pairs in
    /// `weights[i]`.
    pub fn combine_rows(&mut self, table: Var, weights: Vec<Vec<(usize, f64)>>) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(weights.len(), t.cols);
        for (i, row) in weights.iter().enumerate() {
            let o = out.row_mut(i);
            for &(r, w) in row {
                for (a, b) in o.iter_mut().zip(t.row(r)) {
                    *a += w * b;
                }
            }
        }
        let ng = self.ng(table);
        self.push(out, Op::Combine { table, weights }, ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xv.cols;
        let mut xhat = Matrix::zeros(xv.rows, n);
        let mut out = Matrix::zeros(xv.rows, n);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..n {
                let h = (row[c] - mean) * inv;
                xhat.data[r * n + c] = h;
                out.data[r * n + c] = g.data[c] * h + b.data[c];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = gelu(*v);
        }
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Multi-head scaled dot-product self-attention. Keys with
    /// `key_mask[j] == false` receive no attention weight.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: &[bool]) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        assert_eq!(d % heads, 0, "width divisible by heads");
        assert_eq!(key_mask.len(), n);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut p = Matrix::zeros(n, n);
            for i in 0..n {
                let qi = &qv.data[i * d + off..i * d + off + dh];
                let prow = p.row_mut(i);
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if key_mask[j] {
                        let kj = &kv.data[j * d + off..j * d + off + dh];
                        let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                        prow[j] = s;
                        max = max.max(s);
                    }
                }
                let mut sum = 0.0;
                for j in 0..n {
                    prow[j] = if key_mask[j] { (prow[j] - max).exp() } else { 0.0 };
                    sum += prow[j];
                }
                for pj in prow.iter_mut() {
                    *pj /= sum;
                }
                let orow = &mut out.data[i * d + off..i * d + off + dh];
                for j in 0..n {
                    let w = p.data[i * n + j];
                    if w != 0.0 {
                        let vj = &vv.data[j * d + off..j * d + off + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += w * x;
                        }
                    }
                }
            }
            probs.push(p);
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        )
    }

    /// Sum over rows of `-log softmax(logits[r])[targets[r]]`, as a `1 x 1`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target per row");
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            loss += lse - row[t];
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let ng = self.ng(logits);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Backpropagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads = self.params.zero_grads();
        let mut node_grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for i in (0..=root.0).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, m: Matrix, node_grads: &mut Vec<Option<Matrix>>| {
                if !self.ng(v) {
                    return;
                }
                match &mut node_grads[v.0] {
                    Some(existing) => existing.add_assign(&m),
                    slot => *slot = Some(m),
                }
            };
            match &node.op {
                Op::Param(id) => grads.0[id.0].add_assign(&g),
                Op::Input => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let mut da = Matrix::zeros(av.rows, av.cols);
                        gemm(g.rows, g.cols, bv.rows, 1.0, &g.data, false, &bv.data, true, 0.0, &mut da.data);
                        acc(*a, da, &mut node_grads);
                    }
                    if self.ng(*b) {
                        let mut db = Matrix::zeros(bv.rows, bv.cols);
                        gemm(av.cols, av.rows, g.cols, 1.0, &av.data, true, &g.data, false, 0.0, &mut db.data);
                        acc(*b, db, &mut node_grads);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let mut da = Matrix::zeros(av.rows, av.cols);
                        gemm(g.rows, g.cols, bv.cols, 1.0, &g.data, false, &bv.data, false, 0.0, &mut da.data);
                        acc(*a, da, &mut node_grads);
                    }
                    if self.ng(*b) {
                        let mut db = Matrix::zeros(bv.rows, bv.cols);
                        gemm(g.cols, g.rows, av.cols, 1.0, &g.data, true, &av.data, false, 0.0, &mut db.data);
                        acc(*b, db, &mut node_grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut node_grads);
                    acc(*b, g, &mut node_grads);
                }
                Op::AddRow(x, bias) => {
                    if self.ng(*bias) {
                        let mut db = Matrix::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (d, x) in db.data.iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                        acc(*bias, db, &mut node_grads);
                    }
                    acc(*x, g, &mut node_grads);
                }
                Op::Scale(x, f) => {
                    let mut dx = g;
                    dx.scale(*f);
                    acc(*x, dx, &mut node_grads);
                }
                Op::Gather { table, rows } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, x) in dt.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    acc(*table, dt, &mut node_grads);
                }
                Op::Combine { table, weights } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (i, row) in weights.iter().enumerate() {
                        for &(r, w) in row {
                            for (d, x) in dt.row_mut(r).iter_mut().zip(g.row(i)) {
                                *d += w * x;
                            }
                        }
                    }
                    acc(*table, dt, &mut node_grads);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let n = g.cols;
                    let mut dgamma = Matrix::zeros(1, n);
                    let mut dbeta = Matrix::zeros(1, n);
                    let mut dx = Matrix::zeros(g.rows, n);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..n {
                            dgamma.data[c] += gr[c] * hr[c];
                            dbeta.data[c] += gr[c];
                            let dh = gr[c] * gv.data[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        let inv = inv_std[r];
                        let dxr = dx.row_mut(r);
                        for c in 0..n {
                            let dh = gr[c] * gv.data[c];
                            dxr[c] = inv / n as f64 * (n as f64 * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                    acc(*gamma, dgamma, &mut node_grads);
                    acc(*beta, dbeta, &mut node_grads);
                    acc(*x, dx, &mut node_grads);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data.iter_mut().zip(&xv.data) {
                        *d *= gelu_grad(v);
                    }
                    acc(*x, dx, &mut node_grads);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, d) = qv.shape();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Matrix::zeros(n, d);
                    let mut dk = Matrix::zeros(n, d);
                    let mut dv = Matrix::zeros(n, d);
                    let mut dp = vec![0.0; n];
                    for (h, p) in probs.iter().enumerate() {
                        let off = h * dh;
                        for i in 0..n {
                            let gi = &g.data[i * d + off..i * d + off + dh];
                            let prow = p.row(i);
                            let mut dot_pd = 0.0;
                            for j in 0..n {
                                if prow[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let vj = &vv.data[j * d + off..j * d + off + dh];
                                dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                                dot_pd += prow[j] * dp[j];
                                let dvj = &mut dv.data[j * d + off..j * d + off + dh];
                                for (o, x) in dvj.iter_mut().zip(gi) {
                                    *o += prow[j] * x;
                                }
                            }
                            for j in 0..n {
                                if prow[j] == 0.0 {
                                    continue;
                                }
                                let ds = prow[j] * (dp[j] - dot_pd) * scale;
                                for c in 0..dh {
                                    dq.data[i * d + off + c] += ds * kv.data[j * d + off + c];
                                    dk.data[j * d + off + c] += ds * qv.data[i * d + off + c];
                                }
                            }
                        }
                    }
                    acc(*q, dq, &mut node_grads);
                    acc(*k, dk, &mut node_grads);
                    acc(*v, dv, &mut node_grads);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.data[0];
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl.data[r * dl.cols + t] -= 1.0;
                    }
                    dl.scale(scale);
                    acc(*logits, dl, &mut node_grads);
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences over every parameter of `store`.
    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: Fn(&mut Graph) -> Var,
    {
        let analytic = {
            let mut g = Graph::new(store);
            let root = f(&mut g);
            g.backward(root).to_flat()
        };
        let eval = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let root = f(&mut g);
            g.scalar(root)
        };
        let h = 1e-5;
        for i in 0..store.numel() {
            let orig = *store.flat_mut(i);
            *store.flat_mut(i) = orig + h;
            let plus = eval(store);
            *store.flat_mut(i) = orig - h;
            let minus = eval(store);
            *store.flat_mut(i) = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-5, "param {i}: analytic {} numeric {numeric}", analytic[i]);
        }
    }

    fn rand_store(shapes: &[(usize, usize)], seed: u64) -> (ParamStore, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| store.add(format!("p{i}"), Matrix::randn(r, c, 0.7, &mut rng)))
            .collect();
        (store, ids)
    }

    #[test]
    fn matmul_chain_gradients() {
        let (mut store, ids) = rand_store(&[(3, 4), (4, 5), (6, 5), (1, 6)], 1);
        check(&mut store, |g| {
            let a = g.param(ids[0]);
            let b = g.param(ids[1]);
            let c = g.param(ids[2]);
            let bias = g.param(ids[3]);
            let ab = g.matmul(a, b);
            let abc = g.matmul_bt(ab, c);
            let out = g.add_row(abc, bias);
            let act = g.gelu(out);
            g.softmax_xent(act, &[0, 3, 5])
        });
    }

    #[test]
    fn layer_norm_and_attention_gradients() {
        let (mut store, ids) = rand_store(&[(5, 4), (1, 4), (1, 4), (4, 4), (4, 4), (4, 4), (4, 3)], 2);
        check(&mut store, |g| {
            let x = g.param(ids[0]);
            let gamma = g.param(ids[1]);
            let beta = g.param(ids[2]);
            let h = g.layer_norm(x, gamma, beta);
            let wq = g.param(ids[3]);
            let wk = g.param(ids[4]);
            let wv = g.param(ids[5]);
            let q = g.matmul(h, wq);
            let k = g.matmul(h, wk);
            let v = g.matmul(h, wv);
            let a = g.attention(q, k, v, 2, &[true, true, false, true, true]);
            let res = g.add(a, x);
            let w = g.param(ids[6]);
            let logits = g.matmul(res, w);
            let l = g.softmax_xent(logits, &[0, 1, 2, 1, 0]);
            g.scale(l, 0.5)
        });
    }

    #[test]
    fn gather_and_combine_gradients() {
        let (mut store, ids) = rand_store(&[(6, 3), (1, 3)], 3);
        check(&mut store, |g| {
            let table = g.param(ids[0]);
            let rows = g.gather(table, &[1, 4, 1]);
            let combo = g.combine_rows(table, vec![vec![(0, 1.0)], vec![(2, 0.5), (3, 0.5), (5, 1.0)]]);
            let logits = g.matmul_bt(rows, combo);
            let bias = g.param(ids[1]);
            let _unused = g.add_row(rows, bias);
            g.softmax_xent(logits, &[1, 0, 1])
        });
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let (store, ids) = rand_store(&[(3, 2)], 4);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let out = g.attention(x, x, x, 1, &[true, false, false]);
        let v = g.value(out).clone();
        for r in 0..3 {
            assert_eq!(v.row(r), store.get(ids[0]).row(0));
        }
    }
}
