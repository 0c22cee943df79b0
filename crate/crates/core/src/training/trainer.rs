use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, learning_rate, OptimizerState};
use super::gradients::backward;
use super::masking::make_mask_plan;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::feature_space::FeatureSequence;
use crate::forecaster::{ForecasterWeights, MaskStrategy};
use crate::real::Real;

/// Training clips for each phase. Phase-2 clips are required only when the
/// config has a `phase2` block.
#[derive(Debug, Clone, Copy)]
pub struct TrainingCorpus<'a, T = f32> {
    pub phase1: &'a [FeatureSequence<T>],
    pub phase2: Option<&'a [FeatureSequence<T>]>,
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// Global step counted across both phases.
    pub step: usize,
    pub phase: u8,
    pub lr: f64,
    pub loss: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T = f32> {
    pub weights: ForecasterWeights<T>,
    pub optimizer: OptimizerState<T>,
    pub phase: u8,
    /// Updates completed within the current phase.
    pub step: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(weights: ForecasterWeights<T>) -> Self {
        let optimizer = OptimizerState::new(&weights);
        TrainState {
            weights,
            optimizer,
            phase: 1,
            step: 0,
        }
    }

    fn phase_steps(&self, cfg: &TrainConfig) -> usize {
        if self.phase == 1 {
            cfg.total_steps
        } else {
            cfg.phase2.map_or(0, |p| p.steps)
        }
    }

    fn global_step(&self, cfg: &TrainConfig) -> usize {
        if self.phase == 1 {
            self.step
        } else {
            cfg.total_steps + self.step
        }
    }

    pub fn is_finished(&self, cfg: &TrainConfig) -> bool {
        self.step >= self.phase_steps(cfg) && (self.phase == 2 || cfg.phase2.is_none())
    }
}

/// Stateless per-sample stream so that any step can be replayed exactly.
fn sample_rng(seed: u64, phase: u8, step: usize, slot: usize) -> ChaCha8Rng {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [phase as u64, step as u64, slot as u64] {
        x = (x ^ v).wrapping_mul(0xBF58_476D_1CE4_E5B9).rotate_left(31);
    }
    ChaCha8Rng::seed_from_u64(x)
}

fn epoch_order(seed: u64, phase: u8, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = sample_rng(seed, phase, epoch, usize::MAX);
    order.shuffle(&mut rng);
    order
}

fn check_clips<T: Real>(clips: &[FeatureSequence<T>], w: &ForecasterWeights<T>) -> Result<()> {
    let c = &w.config;
    let expect = [c.seq_frames, c.grid_h, c.grid_w, c.d_in];
    if clips.is_empty() {
        return Err(Error::param("training corpus is empty"));
    }
    if let Some((i, bad)) = clips.iter().enumerate().find(|(_, s)| s.dims() != expect) {
        return Err(Error::dim(format!(
            "clip {i} has shape {:?}, model expects {expect:?}",
            bad.dims()
        )));
    }
    Ok(())
}

/// One optimizer update on the next batch; returns its loss record.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    clips: &[FeatureSequence<T>],
    cfg: &TrainConfig,
) -> Result<LossRecord> {
    let c = state.weights.config.clone();
    let loss_cfg = cfg.loss();
    let batch = cfg.batch_size;
    let step = state.step;
    let phase = state.phase;
    let mut orders: Vec<(usize, Vec<usize>)> = Vec::new();
    let picks: Vec<usize> = (0..batch)
        .map(|k| {
            let g = step * batch + k;
            let epoch = g / clips.len();
            if orders.last().map(|(e, _)| *e) != Some(epoch) {
                orders.push((epoch, epoch_order(cfg.seed, phase, epoch, clips.len())));
            }
            orders.last().unwrap().1[g % clips.len()]
        })
        .collect();

    let weights = &state.weights;
    let results = picks
        .par_iter()
        .enumerate()
        .map(|(k, &clip)| {
            let mut rng = sample_rng(cfg.seed, phase, step, k);
            let ratio = match (cfg.mask_strategy, cfg.random_ratio) {
                (MaskStrategy::Full, _) => 1.0,
                (MaskStrategy::Random, Some(r)) => r,
                (MaskStrategy::Random, None) => rng.random_range(0.5..1.0),
            };
            let plan = make_mask_plan(
                cfg.mask_strategy,
                c.seq_frames,
                c.context_frames,
                c.grid_h,
                c.grid_w,
                ratio,
                &mut rng,
            )?;
            let f = &clips[clip];
            backward(f, f, &plan, weights, &loss_cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let inv = T::one() / T::from_usize(batch).unwrap();
    let mut grads = state.weights.zeros_like();
    let mut loss = T::zero();
    for (l, g) in &results {
        grads.add_assign(&g.weights);
        loss += *l;
    }
    grads.scale(inv);
    loss *= inv;
    if let Some(max_norm) = cfg.clip_grad_norm {
        let norm = grads.squared_norm().sqrt().to_f64().unwrap();
        if norm > max_norm {
            grads.scale(T::lit(max_norm / norm));
        }
    }
    let total = state.phase_steps(cfg);
    let record = LossRecord {
        step: state.global_step(cfg),
        phase,
        lr: learning_rate(cfg, step, total),
        loss: loss.to_f64().unwrap(),
    };
    adam_step(
        &mut state.weights,
        &grads,
        &mut state.optimizer,
        cfg,
        step,
        total,
    );
    state.step += 1;
    Ok(record)
}

/// Continues `state` until training finishes or `max_steps` more updates
/// have been applied. Moves to the phase-2 grid (interpolated positions,
/// fresh optimizer moments) when phase 1 completes.
pub fn continue_training<T: Real>(
    mut state: TrainState<T>,
    corpus: TrainingCorpus<'_, T>,
    cfg: &TrainConfig,
    max_steps: Option<usize>,
) -> Result<(TrainState<T>, Vec<LossRecord>)> {
    cfg.validate()?;
    let mut curve = Vec::new();
    let budget = max_steps.unwrap_or(usize::MAX);
    while curve.len() < budget && !state.is_finished(cfg) {
        if state.phase == 1 && state.step >= cfg.total_steps {
            let p2 = cfg.phase2.expect("unfinished phase 1 implies phase2");
            let weights = state.weights.interpolate_positions(p2.grid_h, p2.grid_w)?;
            state = TrainState {
                optimizer: OptimizerState::new(&weights),
                weights,
                phase: 2,
                step: 0,
            };
            continue;
        }
        let clips = if state.phase == 1 {
            corpus.phase1
        } else {
            corpus
                .phase2
                .ok_or_else(|| Error::param("phase2 configured but no phase-2 corpus given"))?
        };
        if state.step == 0 || curve.is_empty() {
            check_clips(clips, &state.weights)?;
        }
        curve.push(train_step(&mut state, clips, cfg)?);
    }
    Ok((state, curve))
}

/// Full training run from initial weights.
pub fn run_training<T: Real>(
    corpus: TrainingCorpus<'_, T>,
    cfg: &TrainConfig,
    init: ForecasterWeights<T>,
) -> Result<(ForecasterWeights<T>, Vec<LossRecord>)> {
    let (state, curve) = continue_training(TrainState::new(init), corpus, cfg, None)?;
    Ok((state.weights, curve))
}

/// All windows of `frames` frames whose ids are spaced by `stride`.
pub fn extract_clips<T: Real>(
    seq: &FeatureSequence<T>,
    frames: usize,
    stride: i64,
) -> Result<Vec<FeatureSequence<T>>> {
    if frames == 0 || stride <= 0 {
        return Err(Error::param("clip length and stride must be positive"));
    }
    let mut out = Vec::new();
    for &start in seq.frame_ids() {
        let ids: Vec<i64> = (0..frames as i64).map(|k| start + k * stride).collect();
        if ids.iter().all(|&id| seq.index_of(id).is_some()) {
            out.push(seq.select_ids(&ids)?);
        }
    }
    Ok(out)
}

/// Loss curve as CSV with columns `step,phase,lr,loss`.
pub fn loss_curve_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from("step,phase,lr,loss\n");
    for r in curve {
        s.push_str(&format!("{},{},{:e},{:e}\n", r.step, r.phase, r.lr, r.loss));
    }
    s
}
