use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    Full,
    Random,
}

/// Boolean `[N, H, W]` map of positions replaced by the MASK vector and
/// scored by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    mask: Vec<bool>,
    dims: [usize; 3],
    strategy: MaskStrategy,
    ratio: f64,
}

impl MaskPlan {
    /// Masks every position of frames `context_frames..n_frames`.
    pub fn full(n_frames: usize, context_frames: usize, h: usize, w: usize) -> Result<Self> {
        if context_frames >= n_frames || h == 0 || w == 0 {
            return Err(Error::param(format!(
                "invalid frame counts: context {context_frames}, total {n_frames}"
            )));
        }
        let hw = h * w;
        let mask = (0..n_frames * hw).map(|i| i / hw >= context_frames).collect();
        Ok(MaskPlan {
            mask,
            dims: [n_frames, h, w],
            strategy: MaskStrategy::Full,
            ratio: 1.0,
        })
    }

    pub fn from_mask(
        mask: Vec<bool>,
        dims: [usize; 3],
        strategy: MaskStrategy,
        ratio: f64,
    ) -> Result<Self> {
        if mask.len() != dims.iter().product::<usize>() {
            return Err(Error::dim(format!(
                "mask of length {} does not match {dims:?}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::param("mask plan has no masked position"));
        }
        Ok(MaskPlan {
            mask,
            dims,
            strategy,
            ratio,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn strategy(&self) -> MaskStrategy {
        self.strategy
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn is_masked(&self, n: usize, h: usize, w: usize) -> bool {
        self.mask[(n * self.dims[1] + h) * self.dims[2] + w]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}
