//! Minimal reverse-mode autodiff, the transformer encoder layer, Adam and
//! the learning-rate schedule.

pub mod graph;
pub mod optim;
pub mod tensor;
pub mod transformer;

pub use graph::{gelu_scalar, Gradients, Graph, NodeId};
pub use optim::{adam_step, lr_at, AdamState, LrSchedule};
pub use tensor::Tensor;
pub use transformer::{sinusoidal_positions, transformer_layer, TransformerLayer};

use rand::Rng as _;

use crate::rng::Rng;

/// Uniform fan-in initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_raw(vec![rows, cols], data)
}
