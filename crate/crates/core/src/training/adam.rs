use std::f64::consts::PI;

use super::TrainConfig;
use crate::forecaster::ForecasterWeights;
use crate::real::Real;

/// Adam first/second moments plus the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ForecasterWeights<T>,
    pub v: ForecasterWeights<T>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(weights: &ForecasterWeights<T>) -> Self {
        OptimizerState {
            m: weights.zeros_like(),
            v: weights.zeros_like(),
            step: 0,
        }
    }
}

/// Learning rate at (0-based) `step`: linear warmup, then cosine decay that
/// reaches zero at `total_steps`.
pub fn learning_rate(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    if step >= total_steps {
        return 0.0;
    }
    let span = (total_steps - cfg.warmup_steps).max(1) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    cfg.lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// One bias-corrected Adam update using the scheduled rate for `step`.
pub fn adam_step<T: Real>(
    weights: &mut ForecasterWeights<T>,
    grads: &ForecasterWeights<T>,
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
    step: usize,
    total_steps: usize,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = T::lit(1.0 - b1.powi(t));
    let c2 = T::lit(1.0 - b2.powi(t));
    let lr = T::lit(learning_rate(cfg, step, total_steps));
    let eps = T::lit(cfg.adam_eps);
    let (b1, b2) = (T::lit(b1), T::lit(b2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let gs = grads.named_tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((w, (_, g)), m), v) in weights.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        for i in 0..w.len() {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            w[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
