use serde::{Deserialize, Serialize};

use super::loss::{LossConfig, LossVariant};
use crate::error::{Error, Result};
use crate::forecaster::MaskStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Cosine,
}

/// High-resolution fine-tuning phase run after position interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase2 {
    pub grid_h: usize,
    pub grid_w: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_variant: LossVariant,
    pub beta: f64,
    pub cos_weight: f64,
    pub mask_strategy: MaskStrategy,
    /// Fixed masking probability for the random strategy; when absent a
    /// ratio is drawn per sample from `[0.5, 1.0)`.
    pub random_ratio: Option<f64>,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub schedule: LrSchedule,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Optional global gradient-norm clip.
    pub clip_grad_norm: Option<f64>,
    pub phase2: Option<Phase2>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_variant: LossVariant::SmoothL1,
            beta: 0.1,
            cos_weight: 1.0,
            mask_strategy: MaskStrategy::Full,
            random_ratio: None,
            lr: 6.4e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            schedule: LrSchedule::Cosine,
            warmup_steps: 0,
            total_steps: 1000,
            batch_size: 8,
            seed: 0,
            clip_grad_norm: None,
            phase2: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::param("lr must be finite and non-negative"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.beta > 0.0) {
            return Err(Error::param("beta must be positive"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps must be positive"));
        }
        if let Some(r) = self.random_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::param("random_ratio must lie in (0, 1]"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be >= 1"));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::param("clip_grad_norm must be positive"));
            }
        }
        if let Some(p) = self.phase2 {
            if p.grid_h == 0 || p.grid_w == 0 {
                return Err(Error::param("phase2 grid must be at least 1x1"));
            }
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            variant: self.loss_variant,
            beta: self.beta,
            cos_weight: self.cos_weight,
        }
    }
}
