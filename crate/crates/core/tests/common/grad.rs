//! Finite-difference cases shared by the gradient tests and the acceptance
//! run. Each case returns its worst normwise relative error.

use refess_core::encoder::{frame_signal, ToyEncoderParams};
use refess_core::estimator::{EstimatorConfig, EstimatorModel, FeatureMode, MetricMode, TripletInput};
use refess_core::nn::{Graph, NodeId, Tensor, TransformerLayer};
use refess_core::rng;
use refess_core::signal::synth_source;

use super::{max_gradient_error, random};

fn leaves(g: &mut Graph, xs: &[Tensor]) -> Vec<NodeId> {
    xs.iter().map(|x| g.leaf(x.clone(), true)).collect()
}

fn mse_to(g: &mut Graph, y: NodeId, seed: u64) -> NodeId {
    let target = random(g.value(y).shape(), seed, 1.0);
    g.mse_loss(y, &target).unwrap()
}

fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[NodeId]) -> NodeId) -> f64 {
    let build = |g: &mut Graph, xs: &[Tensor]| {
        let ids = leaves(g, xs);
        let y = f(g, &ids);
        (mse_to(g, y, 999), ids)
    };
    max_gradient_error(&build, &inputs)
}

pub fn matmul() -> f64 {
    let a = check(vec![random(&[3, 4], 1, 1.0), random(&[4, 5], 2, 1.0)], |g, x| g.matmul(x[0], x[1]).unwrap());
    // shared operand on both sides
    let b = check(vec![random(&[3, 3], 3, 1.0)], |g, x| g.matmul(x[0], x[0]).unwrap());
    a.max(b)
}

pub fn add() -> f64 {
    let a = check(vec![random(&[3, 4], 1, 1.0), random(&[3, 4], 2, 1.0)], |g, x| g.add(x[0], x[1]).unwrap());
    let b = check(vec![random(&[5, 4], 3, 1.0), random(&[4], 4, 1.0)], |g, x| g.add(x[0], x[1]).unwrap());
    a.max(b)
}

pub fn concat() -> f64 {
    check(vec![random(&[4, 2], 1, 1.0), random(&[4, 3], 2, 1.0), random(&[4, 1], 3, 1.0)], |g, x| g.concat_cols(x).unwrap())
}

pub fn mean_pool() -> f64 {
    check(vec![random(&[6, 3], 1, 1.0)], |g, x| g.mean_pool(x[0], 3).unwrap())
}

pub fn layer_norm() -> f64 {
    check(vec![random(&[4, 5], 1, 2.0), random(&[5], 2, 1.0), random(&[5], 3, 1.0)], |g, x| {
        g.layer_norm(x[0], x[1], x[2], 1e-5).unwrap()
    })
}

pub fn gelu() -> f64 {
    check(vec![random(&[4, 6], 1, 3.0)], |g, x| g.gelu(x[0]))
}

pub fn softmax() -> f64 {
    check(vec![random(&[3, 5], 1, 2.0)], |g, x| g.softmax(x[0]).unwrap())
}

pub fn attention() -> f64 {
    let q = random(&[6, 4], 1, 1.0);
    let k = random(&[6, 4], 2, 1.0);
    let v = random(&[6, 4], 3, 1.0);
    check(vec![q, k, v], |g, x| g.attention(x[0], x[1], x[2], 2, 3).unwrap())
}

pub fn mse() -> f64 {
    check(vec![random(&[3, 2], 1, 1.0)], |_, x| x[0])
}

pub fn transformer_layer() -> f64 {
    let layer = TransformerLayer::new(6, 2, &mut rng::seeded(5)).unwrap();
    let mut inputs = vec![random(&[4, 6], 1, 1.0)];
    inputs.extend(layer.params().iter().map(|t| (*t).clone()));
    // perturb the layer-norm affine terms away from 1/0 so they matter
    for (i, t) in inputs.iter_mut().enumerate().skip(1) {
        if t.shape().len() == 1 {
            *t = random(t.shape(), 100 + i as u64, 1.0);
        }
    }
    let build = |g: &mut Graph, xs: &[Tensor]| {
        let mut l = layer.clone();
        for (slot, v) in l.params_mut().into_iter().zip(&xs[1..]) {
            *slot = v.clone();
        }
        let x = g.leaf(xs[0].clone(), true);
        let (y, p) = l.forward(g, x, 2, true).unwrap();
        let mut ids = vec![x];
        ids.extend(p);
        (mse_to(g, y, 7), ids)
    };
    max_gradient_error(&build, &inputs)
}

/// Encoder projection and bias on a single frame.
pub fn toy_encoder() -> f64 {
    let enc = ToyEncoderParams::init(16, 8, 3, 2).unwrap();
    let frame = random(&[1, 16], 4, 1.0);
    let build = |g: &mut Graph, xs: &[Tensor]| {
        let f = g.leaf(frame.clone(), false);
        let w = g.leaf(xs[0].clone(), true);
        let b = g.leaf(xs[1].clone(), true);
        let y = enc.forward_with(g, f, w, b).unwrap();
        (mse_to(g, y, 9), vec![w, b])
    };
    max_gradient_error(&build, &[enc.projection.clone(), random(&[3], 5, 0.5)])
}

fn tiny_model(mode: MetricMode) -> EstimatorModel {
    let c = EstimatorConfig {
        metric_mode: mode,
        feature_mode: FeatureMode::Toy,
        feature_dim: 2,
        heads: 2,
        frame_len: 16,
        hop: 8,
        warmup_steps: 1,
        total_steps: 2,
        seed: 3,
        ..Default::default()
    };
    EstimatorModel::init(&c).unwrap()
}

fn model_params(m: &EstimatorModel) -> Vec<Tensor> {
    let e = m.encoder.as_ref().unwrap();
    let mut p = vec![e.projection.clone(), e.bias.clone()];
    p.extend(m.transformer.params().iter().map(|t| (*t).clone()));
    p.push(m.head_weight.clone());
    p.push(m.head_bias.clone());
    p
}

fn with_params(m: &EstimatorModel, xs: &[Tensor]) -> EstimatorModel {
    let mut m = m.clone();
    let e = m.encoder.as_mut().unwrap();
    e.projection = xs[0].clone();
    e.bias = xs[1].clone();
    for (slot, v) in m.transformer.params_mut().into_iter().zip(&xs[2..18]) {
        *slot = v.clone();
    }
    m.head_weight = xs[18].clone();
    m.head_bias = xs[19].clone();
    m
}

/// Audio frames → shared toy encoder → concat → transformer → pool → head
/// → MSE, differentiated with respect to every parameter.
pub fn end_to_end(mode: MetricMode) -> f64 {
    let sig = |seed| synth_source(seed, 0.004, 16_000).unwrap();
    let frames = |seed| frame_signal(&sig(seed), 16, 8).unwrap();
    let input = TripletInput::Frames([frames(1), frames(2), frames(3)]);
    assert!(input.frames() >= 3);
    let model = tiny_model(mode);
    let target = random(&[1, model.n_outputs()], 11, 1.0);
    let build = |g: &mut Graph, xs: &[Tensor]| {
        let m = with_params(&model, xs);
        let (y, nodes) = m.forward_graph(g, &[&input], true, true).unwrap();
        let mut ids = nodes.encoder.unwrap().to_vec();
        ids.extend(nodes.scratch);
        (g.mse_loss(y, &target).unwrap(), ids)
    };
    let mut params = model_params(&model);
    for (i, t) in params.iter_mut().enumerate() {
        if t.shape().len() == 1 {
            *t = random(t.shape(), 200 + i as u64, 0.5);
        }
    }
    max_gradient_error(&build, &params)
}

pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("matmul", matmul()),
        ("add", add()),
        ("concat", concat()),
        ("mean_pool", mean_pool()),
        ("layer_norm", layer_norm()),
        ("gelu", gelu()),
        ("softmax", softmax()),
        ("attention", attention()),
        ("mse", mse()),
        ("transformer_layer", transformer_layer()),
        ("toy_encoder", toy_encoder()),
        ("end_to_end_sisnr", end_to_end(MetricMode::Sisnr)),
        ("end_to_end_joint", end_to_end(MetricMode::Joint)),
    ]
}
