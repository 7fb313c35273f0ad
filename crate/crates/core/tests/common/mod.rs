#![allow(dead_code)]

pub mod grad;

use rand::Rng as _;
use refess_core::nn::{Graph, NodeId, Tensor};
use refess_core::rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;

pub fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// Records a scalar loss over `inputs` (all as trainable leaves) and
/// returns the graph, loss node and the leaf ids in input order.
pub type Builder<'a> = dyn Fn(&mut Graph, &[Tensor]) -> (NodeId, Vec<NodeId>) + 'a;

fn loss_of(build: &Builder<'_>, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let (loss, _) = build(&mut g, inputs);
    g.value(loss).data()[0]
}

/// Largest normwise relative error, over inputs, between the backward
/// gradient and central differences: ‖g − ĝ‖₂ / max(‖g‖₂, ‖ĝ‖₂).
pub fn max_gradient_error(build: &Builder<'_>, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let (loss, leaves) = build(&mut g, inputs);
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zero(*leaf);
        let mut numeric = vec![0.0; inputs[k].len()];
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric[i] = (loss_of(build, &plus) - loss_of(build, &minus)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        if denom < 1e-9 {
            // Structurally zero (e.g. the key bias under row softmax): both
            // routes must agree that it vanishes.
            if diff >= 1e-9 {
                return f64::INFINITY;
            }
            continue;
        }
        worst = worst.max(diff / denom);
    }
    worst
}
