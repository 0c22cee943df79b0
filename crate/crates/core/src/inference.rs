//! Single-step forecasting, autoregressive rollout, sliding-window
//! inference on grids larger than the model's, and the copy-last baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_space::FeatureSequence;
use crate::forecaster::{forward, ForecasterWeights, MaskPlan};
use crate::real::Real;

/// Which frames feed the model and which frame is scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutSchedule {
    pub context_ids: Vec<i64>,
    pub target_id: i64,
    /// Source-frame spacing between consecutive model frames.
    pub stride: i64,
    /// Autoregressive iterations needed to reach `target_id`.
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Short,
    Mid,
    Long,
}

impl std::str::FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(Horizon::Short),
            "mid" => Ok(Horizon::Mid),
            "long" => Ok(Horizon::Long),
            other => Err(Error::param(format!("unknown schedule `{other}`"))),
        }
    }
}

impl RolloutSchedule {
    pub fn new(context_ids: Vec<i64>, stride: i64, steps: usize) -> Result<Self> {
        if context_ids.is_empty() || stride <= 0 || steps == 0 {
            return Err(Error::param("schedule needs context frames, stride >= 1, steps >= 1"));
        }
        if context_ids.windows(2).any(|p| p[1] - p[0] != stride) {
            return Err(Error::param(format!(
                "context ids {context_ids:?} are not spaced by {stride}"
            )));
        }
        let target_id = context_ids.last().unwrap() + steps as i64 * stride;
        Ok(RolloutSchedule {
            context_ids,
            target_id,
            stride,
            steps,
        })
    }

    /// Four context frames at stride 3 ending `steps` model frames before
    /// `target`.
    fn ending_at(target: i64, steps: usize) -> Self {
        let last = target - 3 * steps as i64;
        Self::new((0..4).map(|k| last - 3 * (3 - k)).collect(), 3, steps).unwrap()
    }

    /// Context {8, 11, 14, 17} → frame 20 in one step.
    pub fn short_term() -> Self {
        Self::ending_at(20, 1)
    }

    /// Context {2, 5, 8, 11} → frame 20 through 14 and 17.
    pub fn mid_term() -> Self {
        Self::ending_at(20, 3)
    }

    /// Context {2, 5, 8, 11} → frame 29 through 14, 17, 20, 23 and 26.
    pub fn long_term() -> Self {
        Self::ending_at(29, 6)
    }

    /// Context {11, 14, 17, 20} → frame 29 in three steps (29-frame clips).
    pub fn mid_term_29() -> Self {
        Self::ending_at(29, 3)
    }

    pub fn for_horizon(h: Horizon) -> Self {
        match h {
            Horizon::Short => Self::short_term(),
            Horizon::Mid => Self::mid_term(),
            Horizon::Long => Self::long_term(),
        }
    }

    /// Ids of every frame produced along the way, ending with `target_id`.
    pub fn predicted_ids(&self) -> Vec<i64> {
        let last = *self.context_ids.last().unwrap();
        (1..=self.steps as i64).map(|k| last + k * self.stride).collect()
    }
}

fn frame_stride<T: Real>(context: &FeatureSequence<T>) -> i64 {
    let ids = context.frame_ids();
    if ids.len() >= 2 {
        ids[ids.len() - 1] - ids[ids.len() - 2]
    } else {
        1
    }
}

/// Predicts the frame following `context` (`[N_c, H, W, D]` → `[1, H, W, D]`).
pub fn forecast_next<T: Real>(
    w: &ForecasterWeights<T>,
    context: &FeatureSequence<T>,
) -> Result<FeatureSequence<T>> {
    let c = &w.config;
    let [n, h, wd, d] = context.dims();
    if n != c.context_frames {
        return Err(Error::dim(format!(
            "context has {n} frames, model expects {}",
            c.context_frames
        )));
    }
    if (h, wd, d) != (c.grid_h, c.grid_w, c.d_in) {
        return Err(Error::dim(format!(
            "context grid {h}x{wd}x{d} does not match model {}x{}x{}; interpolate the \
             position table or use sliding-window inference",
            c.grid_h, c.grid_w, c.d_in
        )));
    }
    let stride = frame_stride(context);
    let last = *context.frame_ids().last().unwrap();
    let future = c.seq_frames - c.context_frames;
    let filler = FeatureSequence::new(
        vec![T::zero(); future * h * wd * d],
        [future, h, wd, d],
        (1..=future as i64).map(|k| last + k * stride).collect(),
    )?;
    let full = context.append_frames(&filler)?;
    let plan = MaskPlan::full(c.seq_frames, c.context_frames, h, wd)?;
    let pred = forward(&full, &plan, w, &[])?.pred;
    pred.select_frames(&[c.context_frames])
}

/// Autoregressive rollout with a caller-supplied one-step predictor. The
/// predictor always receives a window of exactly the original context
/// length: oldest frame dropped, newest prediction appended.
pub fn rollout_with<T, F>(
    context: &FeatureSequence<T>,
    steps: usize,
    mut predict: F,
) -> Result<FeatureSequence<T>>
where
    T: Real,
    F: FnMut(&FeatureSequence<T>) -> Result<FeatureSequence<T>>,
{
    if steps == 0 {
        return Err(Error::param("rollout needs at least one step"));
    }
    let n = context.frames();
    let mut window = context.clone();
    let mut outputs: Option<FeatureSequence<T>> = None;
    for _ in 0..steps {
        let next = predict(&window)?;
        let keep: Vec<usize> = (1..n).collect();
        window = if keep.is_empty() {
            next.clone()
        } else {
            window.select_frames(&keep)?.append_frames(&next)?
        };
        outputs = Some(match outputs {
            None => next,
            Some(acc) => acc.append_frames(&next)?,
        });
    }
    Ok(outputs.unwrap())
}

/// `steps` autoregressive predictions, in order.
pub fn rollout<T: Real>(
    w: &ForecasterWeights<T>,
    context: &FeatureSequence<T>,
    steps: usize,
) -> Result<FeatureSequence<T>> {
    rollout_with(context, steps, |window| forecast_next(w, window))
}

/// Window start offsets: every `stride` cells, plus a final window clamped
/// to the far edge when the strides do not land on it.
pub fn window_starts(len: usize, crop: usize, stride: usize) -> Result<Vec<usize>> {
    if crop == 0 || stride == 0 {
        return Err(Error::param("crop and stride must be >= 1"));
    }
    if crop > len {
        return Err(Error::param(format!("crop {crop} larger than grid {len}")));
    }
    let mut starts: Vec<usize> = (0..=len - crop).step_by(stride).collect();
    if *starts.last().unwrap() != len - crop {
        starts.push(len - crop);
    }
    Ok(starts)
}

/// Forecasts a large grid by running the model on aligned spatial crops of
/// the context and averaging overlapping window predictions uniformly.
pub fn sliding_window_forecast<T: Real>(
    w: &ForecasterWeights<T>,
    context: &FeatureSequence<T>,
    crop_h: usize,
    crop_w: usize,
    stride_h: usize,
    stride_w: usize,
) -> Result<FeatureSequence<T>> {
    let [_, big_h, big_w, d] = context.dims();
    if (crop_h, crop_w) != (w.config.grid_h, w.config.grid_w) {
        return Err(Error::param(format!(
            "crop {crop_h}x{crop_w} must equal the model grid {}x{}",
            w.config.grid_h, w.config.grid_w
        )));
    }
    let rows = window_starts(big_h, crop_h, stride_h)?;
    let cols = window_starts(big_w, crop_w, stride_w)?;
    let windows: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    let preds = windows
        .par_iter()
        .map(|&(r, c)| forecast_next(w, &context.crop(r, c, crop_h, crop_w)?))
        .collect::<Result<Vec<_>>>()?;

    let mut sum = vec![T::zero(); big_h * big_w * d];
    let mut count = vec![0usize; big_h * big_w];
    for (&(r0, c0), pred) in windows.iter().zip(&preds) {
        for r in 0..crop_h {
            for c in 0..crop_w {
                let cell = (r0 + r) * big_w + c0 + c;
                count[cell] += 1;
                for (acc, v) in sum[cell * d..(cell + 1) * d].iter_mut().zip(pred.token(0, r, c)) {
                    *acc += *v;
                }
            }
        }
    }
    for (cell, &k) in count.iter().enumerate() {
        debug_assert!(k >= 1);
        if k > 1 {
            let inv = T::from_usize(k).unwrap();
            sum[cell * d..(cell + 1) * d].iter_mut().for_each(|v| *v /= inv);
        }
    }
    FeatureSequence::new(sum, [1, big_h, big_w, d], preds[0].frame_ids().to_vec())
}

/// Baseline: the most recent context frame, relabelled with the next id.
pub fn copy_last<T: Real>(context: &FeatureSequence<T>) -> Result<FeatureSequence<T>> {
    let n = context.frames();
    let mut out = context.select_frames(&[n - 1])?;
    let next = context.frame_ids()[n - 1] + frame_stride(context);
    out.set_frame_ids(vec![next])?;
    Ok(out)
}
