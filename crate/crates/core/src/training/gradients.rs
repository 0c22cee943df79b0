use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{masked_loss_raw, LossConfig};
use crate::error::{Error, Result};
use crate::feature_space::FeatureSequence;
use crate::forecaster::{backward_raw, forward_raw, ForecasterConfig, ForecasterWeights, MaskPlan};
use crate::real::Real;

/// Gradients of the scalar loss with respect to every parameter and to the
/// input features.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub weights: ForecasterWeights<T>,
    pub input: FeatureSequence<T>,
}

fn check<T: Real>(
    f: &FeatureSequence<T>,
    target: &FeatureSequence<T>,
    plan: &MaskPlan,
    w: &ForecasterWeights<T>,
) -> Result<()> {
    let c = &w.config;
    let expect = [c.seq_frames, c.grid_h, c.grid_w, c.d_in];
    if f.dims() != expect || target.dims() != expect {
        return Err(Error::dim(format!(
            "input {:?} / target {:?} do not match model {expect:?}",
            f.dims(),
            target.dims()
        )));
    }
    if plan.dims() != [c.seq_frames, c.grid_h, c.grid_w] {
        return Err(Error::dim("mask plan does not match model grid"));
    }
    Ok(())
}

/// Loss value for one sample.
pub fn loss_value<T: Real>(
    f: &FeatureSequence<T>,
    target: &FeatureSequence<T>,
    plan: &MaskPlan,
    w: &ForecasterWeights<T>,
    loss: &LossConfig,
) -> Result<T> {
    check(f, target, plan, w)?;
    let (pred, _, _) = forward_raw(w, f.data(), plan.mask(), &[]);
    Ok(masked_loss_raw(&pred, target.data(), plan.mask(), w.config.d_in, loss)?.0)
}

/// Forward pass, masked loss and exact reverse-mode gradients.
pub fn backward<T: Real>(
    f: &FeatureSequence<T>,
    target: &FeatureSequence<T>,
    plan: &MaskPlan,
    w: &ForecasterWeights<T>,
    loss: &LossConfig,
) -> Result<(T, Gradients<T>)> {
    check(f, target, plan, w)?;
    let (pred, cache, _) = forward_raw(w, f.data(), plan.mask(), &[]);
    let (value, dpred) = masked_loss_raw(&pred, target.data(), plan.mask(), w.config.d_in, loss)?;
    let (weights, dinput) = backward_raw(w, &cache, &dpred);
    let input = FeatureSequence::new(dinput, f.dims(), f.frame_ids().to_vec())?;
    Ok((value, Gradients { weights, input }))
}

/// Per-tensor outcome of a finite-difference comparison.
#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the tensor.
    pub rel_error: f64,
    /// Worst single-element [`relative_error`] (informational).
    pub max_element_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

const FLOOR: f64 = 1e-6;

/// Elementwise relative error with a magnitude floor so that gradients that
/// are zero analytically are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Norm-wise relative error between two gradient tensors.
pub fn tensor_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(FLOOR)
}

/// Compares every analytic parameter gradient with central differences in
/// 64-bit arithmetic. The headline `max_rel_error` is the worst norm-wise
/// error over parameter tensors.
pub fn gradient_check(
    f: &FeatureSequence<f64>,
    target: &FeatureSequence<f64>,
    plan: &MaskPlan,
    w: &ForecasterWeights<f64>,
    loss: &LossConfig,
    eps: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = backward(f, target, plan, w, loss)?;
    let analytic = grads.weights.named_tensors();
    let mut probe = w.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    let mut checked = 0;
    for (idx, (name, g)) in analytic.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut numerics = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            let orig = probe.tensors_mut()[idx][i];
            probe.tensors_mut()[idx][i] = orig + eps;
            let hi = loss_value(f, target, plan, &probe, loss)?;
            probe.tensors_mut()[idx][i] = orig - eps;
            let lo = loss_value(f, target, plan, &probe, loss)?;
            probe.tensors_mut()[idx][i] = orig;
            let numeric = (hi - lo) / (2.0 * eps);
            max_rel = max_rel.max(relative_error(g[i], numeric));
            numerics.push(numeric);
            max_abs = max_abs.max((g[i] - numeric).abs());
            checked += 1;
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            len: g.len(),
            rel_error: tensor_relative_error(g, &numerics),
            max_element_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps,
        checked,
        max_rel_error,
        tensors,
    })
}

/// Gradient check at a seeded random point of `config`: moderate projection
/// weights, unit-scale MASK and position tables, random input and target,
/// full masking of the future frames.
pub fn gradient_check_random(
    config: &ForecasterConfig,
    loss: &LossConfig,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut w = ForecasterWeights::<f64>::random(config, seed, 0.15)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for t in [&mut w.mask_token, &mut w.pos_temporal, &mut w.pos_spatial] {
        t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let dims = [config.seq_frames, config.grid_h, config.grid_w, config.d_in];
    let len = dims.iter().product::<usize>();
    let ids: Vec<i64> = (0..config.seq_frames as i64).collect();
    let f = FeatureSequence::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), dims, ids.clone())?;
    let target = FeatureSequence::new((0..len).map(|_| rng.random_range(-2.0..2.0)).collect(), dims, ids)?;
    let plan = MaskPlan::full(config.seq_frames, config.context_frames, config.grid_h, config.grid_w)?;
    gradient_check(&f, &target, &plan, &w, loss, eps)
}
