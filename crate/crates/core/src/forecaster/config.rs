use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape hyperparameters of the masked feature transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Feature (PCA) dimension of input and output tokens.
    pub d_in: usize,
    pub seq_frames: usize,
    pub context_frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
}

fn default_mlp_ratio() -> f64 {
    4.0
}

/// Named model sizes: (hidden width, attention heads).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSize {
    Small,
    Base,
    Large,
}

impl ModelSize {
    pub fn width_heads(self) -> (usize, usize) {
        match self {
            ModelSize::Small => (768, 6),
            ModelSize::Base => (1152, 8),
            ModelSize::Large => (1536, 12),
        }
    }
}

impl ForecasterConfig {
    /// Full-scale preset: 12 layers, 5-frame sequences (4 context + 1 future),
    /// 16x32 token crops, 1152-dim PCA features.
    pub fn preset(size: ModelSize) -> Self {
        let (d_model, n_heads) = size.width_heads();
        ForecasterConfig {
            n_layers: 12,
            d_model,
            n_heads,
            d_in: 1152,
            seq_frames: 5,
            context_frames: 4,
            grid_h: 16,
            grid_w: 32,
            mlp_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_in", self.d_in),
            ("seq_frames", self.seq_frames),
            ("context_frames", self.context_frames),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::param(format!("{name} must be >= 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::param(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_frames >= self.seq_frames {
            return Err(Error::param(format!(
                "context_frames {} must be < seq_frames {}",
                self.context_frames, self.seq_frames
            )));
        }
        if !(self.mlp_ratio > 0.0) || !self.mlp_ratio.is_finite() {
            return Err(Error::param("mlp_ratio must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.d_model as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Number of learnable scalars, computed from shapes alone.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let hid = self.mlp_hidden();
        let norm = 2 * d;
        let attn = norm + 4 * (d * d + d);
        let mlp = norm + (d * hid + hid) + (hid * d + d);
        let per_layer = 2 * attn + mlp;
        let embed = (self.d_in * d + d) + d + self.seq_frames * d + self.tokens_per_frame() * d;
        let head = d * self.d_in + self.d_in;
        embed + self.n_layers * per_layer + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut c = ForecasterConfig::preset(ModelSize::Base);
        assert!(c.validate().is_ok());
        c.n_heads = 7;
        assert!(c.validate().is_err());
        c.n_heads = 8;
        c.context_frames = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn preset_sizes_track_reported_counts() {
        for (size, reported) in [
            (ModelSize::Small, 115e6),
            (ModelSize::Base, 258e6),
            (ModelSize::Large, 460e6),
        ] {
            let n = ForecasterConfig::preset(size).param_count() as f64;
            assert!((n / reported - 1.0).abs() < 0.05, "{size:?}: {n}");
        }
    }
}
