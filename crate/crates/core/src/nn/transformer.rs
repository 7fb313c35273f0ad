use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::tensor::Tensor;
use crate::nn::uniform_init;
use crate::rng::Rng;

pub const FFN_RATIO: usize = 4;
pub const LN_EPS: f64 = 1e-5;

/// Pre-LN transformer encoder layer:
/// `h = x + MHA(LN1(x))`, `out = h + W2·GELU(W1·LN2(h) + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerLayer {
    pub d_model: usize,
    pub heads: usize,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl TransformerLayer {
    pub fn new(d_model: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if d_model == 0 || heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidArgument(format!("model width {d_model} is not divisible by {heads} heads")));
        }
        let d = d_model;
        let h = FFN_RATIO * d;
        Ok(Self {
            d_model,
            heads,
            ln1_gain: Tensor::full(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: uniform_init(rng, d, d, d),
            bq: Tensor::zeros(&[d]),
            wk: uniform_init(rng, d, d, d),
            bk: Tensor::zeros(&[d]),
            wv: uniform_init(rng, d, d, d),
            bv: Tensor::zeros(&[d]),
            wo: uniform_init(rng, d, d, d),
            bo: Tensor::zeros(&[d]),
            ln2_gain: Tensor::full(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            w1: uniform_init(rng, d, h, d),
            b1: Tensor::zeros(&[h]),
            w2: uniform_init(rng, h, d, h),
            b2: Tensor::zeros(&[d]),
        })
    }

    pub const PARAM_NAMES: [&'static str; 16] = [
        "ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_gain", "ln2_bias", "w1", "b1",
        "w2", "b2",
    ];

    pub fn params(&self) -> [&Tensor; 16] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo,
            &self.bo, &self.ln2_gain, &self.ln2_bias, &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    /// Records the layer on `g` for input `x` of shape (B·T × d). Returns
    /// the output node and the parameter leaves in [`params`](Self::params)
    /// order.
    pub fn forward(&self, g: &mut Graph, x: NodeId, seq_len: usize, trainable: bool) -> Result<(NodeId, Vec<NodeId>)> {
        let width = g.value(x).cols();
        if width != self.d_model {
            return Err(Error::shape("transformer_layer", format!("input width {width} vs model width {}", self.d_model)));
        }
        let p: Vec<NodeId> = self.params().iter().map(|t| g.leaf((*t).clone(), trainable)).collect();
        let [ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, w1, b1, w2, b2] =
            <[NodeId; 16]>::try_from(p.clone()).expect("sixteen parameters");

        let n1 = g.layer_norm(x, ln1g, ln1b, LN_EPS)?;
        let q = affine(g, n1, wq, bq)?;
        let k = affine(g, n1, wk, bk)?;
        let v = affine(g, n1, wv, bv)?;
        let att = g.attention(q, k, v, self.heads, seq_len)?;
        let proj = affine(g, att, wo, bo)?;
        let h = g.add(x, proj)?;

        let n2 = g.layer_norm(h, ln2g, ln2b, LN_EPS)?;
        let hidden = affine(g, n2, w1, b1)?;
        let act = g.gelu(hidden);
        let ffn = affine(g, act, w2, b2)?;
        let out = g.add(h, ffn)?;
        Ok((out, p))
    }
}

fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Evaluates one layer on a single (T × d) sequence without tracking
/// gradients.
pub fn transformer_layer(x: &Tensor, layer: &TransformerLayer) -> Result<Tensor> {
    let mut g = Graph::new();
    let xi = g.leaf(x.clone(), false);
    let (out, _) = layer.forward(&mut g, xi, x.rows(), false)?;
    Ok(g.value(out).clone())
}

/// Standard sinusoidal position table of shape (T × d).
pub fn sinusoidal_positions(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_raw(vec![t, d], data)
}
