//! Adam and the linear warmup / linear decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed state for parameters with the given element counts.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[&Tensor]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }
}

/// One bias-corrected Adam update over a parameter group.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} state slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::shape("adam_step", format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gr;
            *vi = b2 * *vi + (1.0 - b2) * gr * gr;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear ramp from 0 to `peak_lr` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if !(warmup_steps > 0 && warmup_steps < total_steps) {
            return Err(Error::InvalidArgument(format!(
                "schedule needs 0 < warmup ({warmup_steps}) < total ({total_steps})"
            )));
        }
        if !(peak_lr >= 0.0 && peak_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("peak learning rate {peak_lr} is invalid")));
        }
        Ok(Self { peak_lr, warmup_steps, total_steps })
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        lr_at(step, self)
    }
}

pub fn lr_at(step: u64, schedule: &LrSchedule) -> Result<f64> {
    let LrSchedule { peak_lr, warmup_steps, total_steps } = *schedule;
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} is past the schedule end {total_steps}")));
    }
    Ok(if step <= warmup_steps {
        peak_lr * step as f64 / warmup_steps as f64
    } else {
        peak_lr * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
    })
}
