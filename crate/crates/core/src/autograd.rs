//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] borrows a [`ParamSet`], records every operation of one forward
//! pass, and can then push a scalar seed back through the recorded graph,
//! accumulating parameter gradients into a [`Gradients`] buffer. Tapes are
//! cheap and are built per sequence; nothing is shared between them, so
//! independent sequences can be differentiated on separate threads.

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.rows, t.cols))
                .collect(),
        }
    }
}

/// Gradient buffer aligned index-for-index with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(Matrix::squared_norm)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Embed {
        param: usize,
        ids: Vec<usize>,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var),
    NormalizeRows {
        a: Var,
        norms: Vec<f64>,
    },
    GatherSum {
        a: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    LayerNorm {
        a: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    track: bool,
}

impl<'p> Tape<'p> {
    /// Tape whose parameter leaves require gradients.
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            track: true,
        }
    }

    /// Tape for pure evaluation; [`Tape::backward`] becomes a no-op.
    pub fn inference(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            track: false,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(m), _) => m,
            (None, Op::Param(p)) => &self.params.tensors[*p],
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id.0),
            needs_grad: self.track,
        });
        Var(self.nodes.len() - 1)
    }

    /// Rows `ids` of parameter `id`, stacked in order.
    pub fn embed(&mut self, id: ParamId, ids: &[usize]) -> Var {
        let table = &self.params.tensors[id.0];
        let mut out = Matrix::zeros(ids.len(), table.cols);
        for (r, &tok) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(tok));
        }
        self.nodes.push(Node {
            value: Some(out),
            op: Op::Embed {
                param: id.0,
                ids: ids.to_vec(),
            },
            needs_grad: self.track,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × cols` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let rv = self.value(r);
        assert_eq!(rv.rows, 1);
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, rv.cols);
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&rv.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, r), &[a, r])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        let mut v = self.value(a).clone();
        assert_eq!(v.shape(), bv.shape());
        for (x, y) in v.data.iter_mut().zip(&bv.data) {
            *x *= y;
        }
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols);
        let mut v = Matrix::zeros(av.rows, len);
        for r in 0..av.rows {
            v.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols { a, start }, &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows);
        let v = Matrix::from_vec(
            len,
            av.cols,
            av.data[start * av.cols..(start + len) * av.cols].to_vec(),
        );
        self.push(v, Op::SliceRows { a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows, rows);
            for r in 0..rows {
                v.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols, cols);
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            crate::tensor::log_softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::LogSoftmax(a), &[a])
    }

    /// Scales each row to unit L2 norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let mut norms = Vec::with_capacity(v.rows);
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let n = crate::tensor::norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
            norms.push(n);
        }
        self.push(v, Op::NormalizeRows { a, norms }, &[a])
    }

    /// `Σ_i a[i, idx[i]]` as a `1 × 1` value.
    pub fn gather_sum(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, idx.len());
        let s: f64 = idx.iter().enumerate().map(|(r, &c)| av.get(r, c)).sum();
        self.push(
            Matrix::filled(1, 1, s),
            Op::GatherSum {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), &[a])
    }

    /// Row-wise layer normalisation with learned `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let av = self.value(a);
        let g = self.value(gamma);
        let b = self.value(beta);
        let (rows, cols) = av.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = av.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g.data[c] + b.data[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[a, gamma, beta],
        )
    }

    /// Back-propagates `seed · ∂root/∂θ` into `grads`. `root` must be `1 × 1`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Gradients) {
        if !self.nodes[root.0].needs_grad {
            return;
        }
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(Matrix::filled(1, 1, seed));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => grads.tensors[*p].add_assign(&g),
                Op::Embed { param, ids } => {
                    let table = &mut grads.tensors[*param];
                    for (r, &tok) in ids.iter().enumerate() {
                        for (t, x) in table.row_mut(tok).iter_mut().zip(g.row(r)) {
                            *t += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.wants(*a) {
                        let bv = self.value(*b);
                        let ga = self.slot(&mut adj, *a);
                        g.matmul_nt_into(bv, ga);
                    }
                    if self.wants(*b) {
                        let av = self.value(*a);
                        let gb = self.slot(&mut adj, *b);
                        av.matmul_tn_into(&g, gb);
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if self.wants(*v) {
                            self.slot(&mut adj, *v).add_assign(&g);
                        }
                    }
                }
                Op::AddRow(a, r) => {
                    if self.wants(*a) {
                        self.slot(&mut adj, *a).add_assign(&g);
                    }
                    if self.wants(*r) {
                        let gr = self.slot(&mut adj, *r);
                        for row in 0..g.rows {
                            for (t, x) in gr.data.iter_mut().zip(g.row(row)) {
                                *t += x;
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.wants(*a) {
                        let bv = self.value(*b);
                        let ga = self.slot(&mut adj, *a);
                        for ((t, x), y) in ga.data.iter_mut().zip(&g.data).zip(&bv.data) {
                            *t += x * y;
                        }
                    }
                    if self.wants(*b) {
                        let av = self.value(*a);
                        let gb = self.slot(&mut adj, *b);
                        for ((t, x), y) in gb.data.iter_mut().zip(&g.data).zip(&av.data) {
                            *t += x * y;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.wants(*a) {
                        self.slot(&mut adj, *a).add_scaled(&g, *s);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = self.slot(&mut adj, *a);
                    for ((t, x), y) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *t += x * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = self.slot(&mut adj, *a);
                    for ((t, x), y) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *t += x * y * (1.0 - y);
                    }
                }
                Op::Relu(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = self.slot(&mut adj, *a);
                    for ((t, x), y) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                        if *y > 0.0 {
                            *t += x;
                        }
                    }
                }
                Op::SliceCols { a, start } => {
                    let ga = self.slot(&mut adj, *a);
                    for r in 0..g.rows {
                        for (t, x) in ga.row_mut(r)[*start..*start + g.cols]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *t += x;
                        }
                    }
                }
                Op::SliceRows { a, start } => {
                    let ga = self.slot(&mut adj, *a);
                    let off = start * g.cols;
                    for (t, x) in ga.data[off..off + g.data.len()].iter_mut().zip(&g.data) {
                        *t += x;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        if self.wants(*p) {
                            let gp = self.slot(&mut adj, *p);
                            for r in 0..g.rows {
                                for (t, x) in gp
                                    .row_mut(r)
                                    .iter_mut()
                                    .zip(&g.row(r)[offset..offset + cols])
                                {
                                    *t += x;
                                }
                            }
                        }
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        if self.wants(*p) {
                            let gp = self.slot(&mut adj, *p);
                            for (t, x) in gp.data.iter_mut().zip(&g.data[offset..offset + n]) {
                                *t += x;
                            }
                        }
                        offset += n;
                    }
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    self.slot(&mut adj, *a).add_assign(&gt);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = self.slot(&mut adj, *a);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let inner = crate::tensor::dot(gr, yr);
                        for ((t, x), y) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *t += y * (x - inner);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = self.slot(&mut adj, *a);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let total: f64 = gr.iter().sum();
                        for ((t, x), y) in ga.row_mut(r).iter_mut().zip(gr).zip(y.row(r)) {
                            *t += x - y.exp() * total;
                        }
                    }
                }
                Op::NormalizeRows { a, norms } => {
                    let y = node.value.as_ref().unwrap();
                    let ga = self.slot(&mut adj, *a);
                    for r in 0..g.rows {
                        if norms[r] == 0.0 {
                            continue;
                        }
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let inner = crate::tensor::dot(gr, yr);
                        for ((t, x), y) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *t += (x - y * inner) / norms[r];
                        }
                    }
                }
                Op::GatherSum { a, idx } => {
                    let s = g.data[0];
                    let ga = self.slot(&mut adj, *a);
                    let cols = ga.cols;
                    for (r, &c) in idx.iter().enumerate() {
                        ga.data[r * cols + c] += s;
                    }
                }
                Op::Sum(a) => {
                    let s = g.data[0];
                    for t in self.slot(&mut adj, *a).data.iter_mut() {
                        *t += s;
                    }
                }
                Op::LayerNorm {
                    a,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let cols = g.cols as f64;
                    if self.wants(*gamma) {
                        let gg = self.slot(&mut adj, *gamma);
                        for (i, (x, h)) in g.data.iter().zip(&xhat.data).enumerate() {
                            gg.data[i % g.cols] += x * h;
                        }
                    }
                    if self.wants(*beta) {
                        let gb = self.slot(&mut adj, *beta);
                        for (i, x) in g.data.iter().enumerate() {
                            gb.data[i % g.cols] += x;
                        }
                    }
                    if self.wants(*a) {
                        let gamma_v = self.value(*gamma).data.clone();
                        let ga = self.slot(&mut adj, *a);
                        for r in 0..g.rows {
                            let gr = g.row(r);
                            let hr = xhat.row(r);
                            let dxhat: Vec<f64> =
                                gr.iter().zip(&gamma_v).map(|(x, w)| x * w).collect();
                            let mean_d = dxhat.iter().sum::<f64>() / cols;
                            let mean_dh =
                                dxhat.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / cols;
                            for ((t, d), h) in ga.row_mut(r).iter_mut().zip(&dxhat).zip(hr) {
                                *t += inv_std[r] * (d - mean_d - h * mean_dh);
                            }
                        }
                    }
                }
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn slot<'a>(&self, adj: &'a mut [Option<Matrix>], v: Var) -> &'a mut Matrix {
        let (r, c) = self.value(v).shape();
        adj[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Central-difference check of every parameter entry for a scalar function.
    fn check_grad(params: &ParamSet, f: impl Fn(&mut Tape) -> Var) {
        let mut grads = params.zero_gradients();
        {
            let mut tape = Tape::new(params);
            let out = f(&mut tape);
            tape.backward(out, 1.0, &mut grads);
        }
        let eval = |p: &ParamSet| {
            let mut tape = Tape::inference(p);
            let out = f(&mut tape);
            tape.scalar(out)
        };
        let h = 1e-6;
        for (pi, t) in params.tensors().iter().enumerate() {
            for k in 0..t.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[pi].data[k] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[pi].data[k] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let analytic = grads.tensors[pi].data[k];
                let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / scale < 1e-5,
                    "param {} entry {k}: analytic {analytic} numeric {numeric}",
                    params.names()[pi]
                );
            }
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let mut r = rng();
        let mut params = ParamSet::new();
        let a = params.add("a", Matrix::uniform(3, 4, 1.0, &mut r));
        let b = params.add("b", Matrix::uniform(4, 2, 1.0, &mut r));
        let bias = params.add("bias", Matrix::uniform(1, 2, 1.0, &mut r));
        let c = params.add("c", Matrix::uniform(3, 2, 1.0, &mut r));
        check_grad(&params, |t| {
            let av = t.param(a);
            let bv = t.param(b);
            let m = t.matmul(av, bv);
            let bb = t.param(bias);
            let m = t.add_row(m, bb);
            let th = t.tanh(m);
            let cv = t.param(c);
            let sg = t.sigmoid(cv);
            let prod = t.mul(th, sg);
            let rl = t.relu(prod);
            let sc = t.scale(rl, 1.7);
            let both = t.add(sc, prod);
            t.sum(both)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut r = rng();
        let mut params = ParamSet::new();
        let a = params.add("a", Matrix::uniform(3, 4, 1.0, &mut r));
        let b = params.add("b", Matrix::uniform(2, 4, 1.0, &mut r));
        let w = params.add("w", Matrix::uniform(5, 3, 1.0, &mut r));
        check_grad(&params, |t| {
            let av = t.param(a);
            let bv = t.param(b);
            let rows = t.concat_rows(&[av, bv]);
            let left = t.slice_cols(rows, 0, 2);
            let right = t.slice_cols(rows, 2, 2);
            let mid = t.slice_rows(rows, 1, 3);
            let cat = t.concat_cols(&[right, left]);
            let tr = t.transpose(cat);
            let wv = t.param(w);
            let p = t.matmul(wv, mid);
            let sm = t.softmax(p);
            let q = t.matmul(tr, sm);
            let nq = t.normalize_rows(q);
            let ls = t.log_softmax(nq);
            t.gather_sum(ls, &[0, 3, 1, 2])
        });
    }

    #[test]
    fn embedding_and_layer_norm_gradients() {
        let mut r = rng();
        let mut params = ParamSet::new();
        let e = params.add("emb", Matrix::uniform(6, 4, 1.0, &mut r));
        let g = params.add("gamma", Matrix::uniform(1, 4, 1.0, &mut r));
        let b = params.add("beta", Matrix::uniform(1, 4, 1.0, &mut r));
        let w = params.add("w", Matrix::uniform(4, 4, 1.0, &mut r));
        check_grad(&params, |t| {
            let x = t.embed(e, &[1, 3, 3, 5]);
            let gv = t.param(g);
            let bv = t.param(b);
            let n = t.layer_norm(x, gv, bv, 1e-5);
            let wv = t.param(w);
            let y = t.matmul(n, wv);
            let y = t.tanh(y);
            let ls = t.log_softmax(y);
            t.gather_sum(ls, &[0, 1, 2, 3])
        });
    }

    #[test]
    fn inference_tape_does_not_accumulate() {
        let mut params = ParamSet::new();
        let a = params.add("a", Matrix::filled(1, 1, 2.0));
        let mut grads = params.zero_gradients();
        let mut tape = Tape::inference(&params);
        let v = tape.param(a);
        let s = tape.sum(v);
        tape.backward(s, 1.0, &mut grads);
        assert_eq!(grads.tensors[0].data[0], 0.0);
    }

    #[test]
    fn clip_norm_rescales() {
        let mut g = Gradients {
            tensors: vec![Matrix::from_vec(1, 2, vec![3.0, 4.0])],
        };
        let before = g.clip_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
