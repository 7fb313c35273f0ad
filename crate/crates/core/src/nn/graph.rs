//! Reverse-mode differentiation over a recorded operator graph.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use crate::error::{Error, Result};
use crate::nn::tensor::{gemm, Tensor, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Second operand is either the same shape or a row vector broadcast
    /// over every row of the first.
    Add(NodeId, NodeId, bool),
    ConcatCols(Vec<NodeId>),
    MeanPool { x: NodeId, seq_len: usize },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(NodeId),
    Softmax(NodeId),
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, seq_len: usize, probs: Vec<f64> },
    Mse { pred: NodeId, target: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, or `None` if the node
    /// does not require one.
    pub fn get(&self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].as_ref().map(|g| Tensor::from_raw(self.shapes[id.0].clone(), g.clone()))
    }

    /// Like [`get`](Self::get) but yields zeros for nodes the loss does not
    /// reach.
    pub fn get_or_zero(&self, id: NodeId) -> Tensor {
        self.get(id).unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta.to_vec()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Input or parameter. Constants pass `requires_grad = false`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || !bv.is_matrix() || av.cols() != bv.rows() {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, View::rm(av.data(), k), View::rm(bv.data(), n), 0.0, &mut out, n, 1);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; `b` may also be a vector of length `cols(a)`, added
    /// to every row.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if av.is_matrix() && bv.shape() == [av.cols()] {
            true
        } else {
            return Err(Error::shape("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        };
        let cols = av.cols();
        let data: Vec<f64> = if broadcast {
            av.data().iter().enumerate().map(|(i, x)| x + bv.data()[i % cols]).collect()
        } else {
            av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect()
        };
        let shape = av.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_raw(shape, data), Op::Add(a, b, broadcast), rg))
    }

    /// Concatenation along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if !v.is_matrix() || v.rows() != rows {
                return Err(Error::shape("concat", format!("row count {} vs {:?}", rows, v.shape())));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_raw(vec![rows, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Mean over consecutive blocks of `seq_len` rows: (B·T × d) → (B × d).
    pub fn mean_pool(&mut self, x: NodeId, seq_len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if !xv.is_matrix() || seq_len == 0 || xv.rows() % seq_len != 0 || xv.rows() == 0 {
            return Err(Error::shape("mean_pool", format!("{:?} with seq_len {seq_len}", xv.shape())));
        }
        let (rows, d) = (xv.rows(), xv.cols());
        let b = rows / seq_len;
        let mut out = vec![0.0; b * d];
        for r in 0..rows {
            let dst = &mut out[(r / seq_len) * d..(r / seq_len + 1) * d];
            dst.iter_mut().zip(xv.row(r)).for_each(|(o, v)| *o += v);
        }
        let inv = 1.0 / seq_len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_raw(vec![b, d], out), Op::MeanPool { x, seq_len }, rg))
    }

    /// Per-row normalization followed by an elementwise affine map.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.cols();
        if !xv.is_matrix() || d == 0 {
            return Err(Error::shape("layer_norm", format!("empty or non-matrix input {:?}", xv.shape())));
        }
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape("layer_norm", format!("affine params {:?}/{:?} for width {d}", gv.shape(), bv.shape())));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = gv.data()[c] * h + bv.data()[c];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(Tensor::from_raw(vec![rows, d], out), Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_raw(shape, data), Op::Gelu(x), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.cols() == 0 || xv.is_empty() {
            return Err(Error::shape("softmax", "empty axis"));
        }
        let d = xv.cols();
        let mut data = xv.data().to_vec();
        data.chunks_mut(d).for_each(softmax_in_place);
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_raw(shape, data), Op::Softmax(x), rg))
    }

    /// Multi-head scaled dot-product attention over independent sequences of
    /// `seq_len` rows. `q`, `k`, `v` are (B·T × d); heads split the columns.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, seq_len: usize) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || !qv.is_matrix() {
            return Err(Error::shape("attention", format!("{:?} {:?} {:?}", qv.shape(), kv.shape(), vv.shape())));
        }
        let (rows, d) = (qv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("width {d} not divisible by {heads} heads")));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(Error::shape("attention", format!("{rows} rows not a multiple of seq_len {seq_len}")));
        }
        let dh = d / heads;
        let t = seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let n_seq = rows / t;
        let mut probs = vec![0.0; n_seq * heads * t * t];
        let mut out = vec![0.0; rows * d];
        for s in 0..n_seq {
            let base = s * t * d;
            for h in 0..heads {
                let off = base + h * dh;
                let p = &mut probs[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
                // scores = Q_h K_hᵀ · scale
                gemm(t, dh, t, scale, View::strided(&qv.data()[off..], d, 1), View::strided(&kv.data()[off..], 1, d), 0.0, p, t, 1);
                p.chunks_mut(t).for_each(softmax_in_place);
                gemm(t, t, dh, 1.0, View::rm(p, t), View::strided(&vv.data()[off..], d, 1), 0.0, &mut out[off..], d, 1);
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(Tensor::from_raw(vec![rows, d], out), Op::Attention { q, k, v, heads, seq_len, probs }, rg))
    }

    /// Mean squared error against a constant target; yields a scalar.
    pub fn mse_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || pv.is_empty() {
            return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", pv.shape(), target.shape())));
        }
        let n = pv.len() as f64;
        let loss = pv.data().iter().zip(target.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
        let rg = self.rg(&[pred]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target: target.clone() }, rg))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, View::rm(g, n), View::t(bv.data(), n), 0.0, &mut da, k, 1);
                    accumulate(&mut grads[a.0], &da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, View::t(av.data(), k), View::rm(g, n), 0.0, &mut db, n, 1);
                    accumulate(&mut grads[b.0], &db);
                }
            }
            Op::Add(a, b, broadcast) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    if *broadcast {
                        let cols = self.value(*b).len();
                        let mut db = vec![0.0; cols];
                        for row in g.chunks(cols) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut grads[b.0], &db);
                    } else {
                        accumulate(&mut grads[b.0], g);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut grads[p.0], &dp);
                    }
                    offset += w;
                }
            }
            Op::MeanPool { x, seq_len } => {
                if self.wants(*x) {
                    let xv = self.value(*x);
                    let (rows, d) = (xv.rows(), xv.cols());
                    let inv = 1.0 / *seq_len as f64;
                    let mut dx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let src = &g[(r / seq_len) * d..(r / seq_len + 1) * d];
                        dx[r * d..(r + 1) * d].iter_mut().zip(src).for_each(|(o, v)| *o = v * inv);
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = node.value.cols();
                let rows = node.value.rows();
                let gv = self.value(*gain).data();
                if self.wants(*gain) {
                    let mut dg = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        dg[i % d] += gi * xhat[i];
                    }
                    accumulate(&mut grads[gain.0], &dg);
                }
                if self.wants(*bias) {
                    let mut db = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        db[i % d] += gi;
                    }
                    accumulate(&mut grads[bias.0], &db);
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; rows * d];
                    let inv_d = 1.0 / d as f64;
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            dx[r * d + c] = inv_std[r] * (dh - inv_d * sum_dh - hr[c] * inv_d * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Gelu(x) => {
                if self.wants(*x) {
                    let dx: Vec<f64> = self.value(*x).data().iter().zip(g).map(|(&v, gi)| gi * gelu_grad_scalar(v)).collect();
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let d = node.value.cols();
                    let mut dx = vec![0.0; g.len()];
                    for ((dr, gr), yr) in dx.chunks_mut(d).zip(g.chunks(d)).zip(node.value.data().chunks(d)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            dr[c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Attention { q, k, v, heads, seq_len, probs } => {
                self.backprop_attention(node, g, grads, (*q, *k, *v), *heads, *seq_len, probs);
            }
            Op::Mse { pred, target } => {
                if self.wants(*pred) {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g[0] / pv.len() as f64;
                    let dp: Vec<f64> = pv.data().iter().zip(target.data()).map(|(p, t)| scale * (p - t)).collect();
                    accumulate(&mut grads[pred.0], &dp);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        (q, k, v): (NodeId, NodeId, NodeId),
        heads: usize,
        t: usize,
        probs: &[f64],
    ) {
        let (rows, d) = (node.value.rows(), node.value.cols());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut dp = vec![0.0; t * t];
        for s in 0..rows / t {
            let base = s * t * d;
            for h in 0..heads {
                let off = base + h * dh;
                let p = &probs[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
                // dV_h = Pᵀ dO_h
                gemm(t, t, dh, 1.0, View::t(p, t), View::strided(&g[off..], d, 1), 0.0, &mut dv[off..], d, 1);
                // dP = dO_h V_hᵀ
                gemm(t, dh, t, 1.0, View::strided(&g[off..], d, 1), View::strided(&vv[off..], 1, d), 0.0, &mut dp, t, 1);
                // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                for (dr, pr) in dp.chunks_mut(t).zip(p.chunks(t)) {
                    let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    dr.iter_mut().zip(pr).for_each(|(x, pv)| *x = pv * (*x - dot));
                }
                gemm(t, t, dh, scale, View::rm(&dp, t), View::strided(&kv[off..], d, 1), 0.0, &mut dq[off..], d, 1);
                gemm(t, t, dh, scale, View::t(&dp, t), View::strided(&qv[off..], d, 1), 0.0, &mut dk[off..], d, 1);
            }
        }
        if self.wants(q) {
            accumulate(&mut grads[q.0], &dq);
        }
        if self.wants(k) {
            accumulate(&mut grads[k.0], &dk);
        }
        if self.wants(v) {
            accumulate(&mut grads[v.0], &dv);
        }
    }
}
