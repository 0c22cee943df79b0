use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_space::FeatureSequence;
use crate::forecaster::MaskPlan;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    SmoothL1,
    L1,
    Mse,
    SmoothL1PlusCos,
}

/// Per-token regression loss settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// SmoothL1 transition point.
    pub beta: f64,
    /// Weight of the `1 - cos` term in [`LossVariant::SmoothL1PlusCos`].
    pub cos_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: LossVariant::SmoothL1,
            beta: 0.1,
            cos_weight: 1.0,
        }
    }
}

const COS_EPS: f64 = 1e-12;

/// Quadratic below `beta`, linear above, summed over coordinates.
pub fn smooth_l1<T: Real>(x: &[T], y: &[T], beta: T) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "smooth_l1 on vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if !(beta > T::zero()) {
        return Err(Error::param("smooth_l1 beta must be positive"));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(&a, &b)| smooth_l1_term(a - b, beta))
        .sum())
}

fn smooth_l1_term<T: Real>(diff: T, beta: T) -> T {
    let a = diff.abs();
    if a < beta {
        T::lit(0.5) * a * a / beta
    } else {
        a - T::lit(0.5) * beta
    }
}

fn smooth_l1_grad<T: Real>(diff: T, beta: T) -> T {
    if diff.abs() < beta {
        diff / beta
    } else {
        diff.signum()
    }
}

/// Loss of one token and its gradient with respect to the prediction.
fn token_loss<T: Real>(pred: &[T], target: &[T], cfg: &LossConfig, grad: &mut [T]) -> T {
    let beta = T::lit(cfg.beta);
    let mut loss = T::zero();
    for ((p, t), g) in pred.iter().zip(target).zip(grad.iter_mut()) {
        let diff = *p - *t;
        let (l, dl) = match cfg.variant {
            LossVariant::L1 => (diff.abs(), if diff == T::zero() { T::zero() } else { diff.signum() }),
            LossVariant::Mse => (diff * diff, T::lit(2.0) * diff),
            LossVariant::SmoothL1 | LossVariant::SmoothL1PlusCos => {
                (smooth_l1_term(diff, beta), smooth_l1_grad(diff, beta))
            }
        };
        loss += l;
        *g = dl;
    }
    if cfg.variant == LossVariant::SmoothL1PlusCos {
        let lambda = T::lit(cfg.cos_weight);
        let dot: T = pred.iter().zip(target).map(|(a, b)| *a * *b).sum();
        let np = pred.iter().map(|a| *a * *a).sum::<T>().sqrt();
        let nt = target.iter().map(|a| *a * *a).sum::<T>().sqrt();
        // Two zero vectors count as perfectly aligned.
        if np * nt > T::lit(COS_EPS) {
            let cos = dot / (np * nt);
            // 1 - cos as half the squared distance of unit vectors: exactly
            // zero for identical inputs.
            let gap: T = pred
                .iter()
                .zip(target)
                .map(|(p, t)| {
                    let e = *p / np - *t / nt;
                    e * e
                })
                .sum();
            loss += lambda * T::lit(0.5) * gap;
            for ((g, p), t) in grad.iter_mut().zip(pred).zip(target) {
                let dcos = *t / (np * nt) - cos * *p / (np * np);
                *g -= lambda * dcos;
            }
        } else if np + nt > T::lit(COS_EPS) {
            loss += lambda;
        }
    }
    loss
}

/// Mean per-token loss over masked positions and `dL/dpred` (zero elsewhere).
pub(crate) fn masked_loss_raw<T: Real>(
    pred: &[T],
    target: &[T],
    mask: &[bool],
    d: usize,
    cfg: &LossConfig,
) -> Result<(T, Vec<T>)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::param("loss needs at least one masked position"));
    }
    let inv = T::one() / T::from_usize(count).unwrap();
    let mut grad = vec![T::zero(); pred.len()];
    let mut total = T::zero();
    for (r, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let span = r * d..(r + 1) * d;
        total += token_loss(&pred[span.clone()], &target[span.clone()], cfg, &mut grad[span.clone()]);
        grad[span].iter_mut().for_each(|g| *g *= inv);
    }
    Ok((total * inv, grad))
}

/// Masked feature modelling loss: mean over masked tokens of the per-token
/// loss between prediction and target.
pub fn mfm_loss<T: Real>(
    pred: &FeatureSequence<T>,
    target: &FeatureSequence<T>,
    plan: &MaskPlan,
    cfg: &LossConfig,
) -> Result<T> {
    if pred.dims() != target.dims() {
        return Err(Error::dim(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let [n, h, w, c] = pred.dims();
    if plan.dims() != [n, h, w] {
        return Err(Error::dim("mask plan does not match prediction grid"));
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::param("beta must be positive"));
    }
    Ok(masked_loss_raw(pred.data(), target.data(), plan.mask(), c, cfg)?.0)
}
