use crate::error::{Error, Result};
use crate::nn::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Cosine annealing within one cycle:
/// `η_min + (η_max − η_min)(1 + cos(π·t_cur/t_i))/2`.
pub fn cosine_lr(t_cur: f64, t_i: f64, eta_max: f64, eta_min: f64) -> f64 {
    let c = 0.5 * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos());
    eta_min * (1.0 - c) + eta_max * c
}

/// Learning rate for 0-based `epoch` of `epochs`: a linear ramp reaching
/// `eta_max` at the last warmup epoch, then one cosine cycle over the rest.
pub fn scheduled_lr(epoch: usize, epochs: usize, warmup: usize, eta_max: f64, eta_min: f64) -> f64 {
    if epoch < warmup {
        return eta_max * (epoch + 1) as f64 / warmup as f64;
    }
    let t_i = epochs.saturating_sub(warmup).max(1) as f64;
    cosine_lr((epoch - warmup) as f64, t_i, eta_max, eta_min)
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One AdamW update: decoupled decay `w ← w(1 − lr·λ)`, then the
/// bias-corrected Adam step. `grads` follow parameter order.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::invalid(
            "gradient/state count does not match parameters",
        ));
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let shrink = 1.0 - lr * weight_decay;
    for (i, (_, t)) in params.iter_mut().enumerate() {
        let (g, m, v) = (&grads[i], &mut state.m[i], &mut state.v[i]);
        if g.len() != t.len() {
            return Err(Error::invalid("gradient shape does not match parameter"));
        }
        for (j, w) in t.data_mut().iter_mut().enumerate() {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *w = *w * shrink - lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scales all gradients jointly so their global ℓ₂ norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        grads
            .iter_mut()
            .flatten()
            .for_each(|g| *g = *g * max_norm / norm);
    }
    norm
}
