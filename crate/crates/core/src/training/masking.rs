use rand::Rng;

use crate::error::{Error, Result};
use crate::forecaster::{MaskPlan, MaskStrategy};

/// Builds the mask for one training sample. Context frames are never
/// masked; with `Random`, each future position is masked with probability
/// `ratio`, redrawing until at least one position is masked.
pub fn make_mask_plan<R: Rng>(
    strategy: MaskStrategy,
    n_frames: usize,
    context_frames: usize,
    h: usize,
    w: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskPlan> {
    let full = MaskPlan::full(n_frames, context_frames, h, w)?;
    match strategy {
        MaskStrategy::Full => Ok(full),
        MaskStrategy::Random => {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::param(format!("mask ratio {ratio} outside (0, 1]")));
            }
            loop {
                let mask: Vec<bool> = full
                    .mask()
                    .iter()
                    .map(|&future| future && rng.random::<f64>() < ratio)
                    .collect();
                if mask.iter().any(|&m| m) {
                    return MaskPlan::from_mask(mask, full.dims(), MaskStrategy::Random, ratio);
                }
            }
        }
    }
}
