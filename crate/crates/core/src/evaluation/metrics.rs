use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense class labels with an ignore value and the movable-object subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub labels: Vec<u32>,
    pub height: usize,
    pub width: usize,
    pub ignore_value: u32,
    pub class_count: usize,
    pub movable: Vec<u32>,
}

impl LabelMap {
    pub fn new(
        labels: Vec<u32>,
        height: usize,
        width: usize,
        class_count: usize,
        ignore_value: u32,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        if let Some(bad) = labels
            .iter()
            .find(|&&l| l != ignore_value && l as usize >= class_count)
        {
            return Err(Error::Data(format!(
                "label {bad} outside [0, {class_count}) and not the ignore value"
            )));
        }
        Ok(LabelMap {
            labels,
            height,
            width,
            ignore_value,
            class_count,
            movable: Vec::new(),
        })
    }

    pub fn with_movable(mut self, movable: Vec<u32>) -> Self {
        self.movable = movable;
        self
    }
}

/// Per-class true-positive / false-positive / false-negative counts,
/// accumulated over any number of maps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IouAccumulator {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl IouAccumulator {
    pub fn new(class_count: usize) -> Self {
        IouAccumulator {
            tp: vec![0; class_count],
            fp: vec![0; class_count],
            fn_: vec![0; class_count],
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.labels.len() != gt.labels.len()
            || (pred.height, pred.width) != (gt.height, gt.width)
        {
            return Err(Error::dim(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        if pred.class_count != gt.class_count || gt.class_count != self.tp.len() {
            return Err(Error::dim("class counts differ"));
        }
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == gt.ignore_value || p == pred.ignore_value {
                continue;
            }
            if p == g {
                self.tp[g as usize] += 1;
            } else {
                self.fp[p as usize] += 1;
                self.fn_[g as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.tp, &other.tp),
            (&mut self.fp, &other.fp),
            (&mut self.fn_, &other.fn_),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// IoU per class; `None` for classes absent from both prediction and
    /// ground truth.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.tp.len())
            .map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                (union > 0).then(|| self.tp[c] as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over present classes, optionally restricted to `subset`.
    pub fn mean(&self, subset: Option<&[u32]>) -> Result<f64> {
        let per = self.per_class();
        let vals: Vec<f64> = per
            .iter()
            .enumerate()
            .filter(|(c, _)| subset.is_none_or(|s| s.contains(&(*c as u32))))
            .filter_map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            return Err(Error::Data("no class present to average".into()));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Mean IoU of one map pair, plus per-class IoU.
pub fn miou(pred: &LabelMap, gt: &LabelMap, subset: Option<&[u32]>) -> Result<(f64, Vec<Option<f64>>)> {
    let mut acc = IouAccumulator::new(gt.class_count);
    acc.add(pred, gt)?;
    Ok((acc.mean(subset)?, acc.per_class()))
}

/// Running sums for AbsRel and δ₁.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthAccumulator {
    rel_sum: f64,
    within: u64,
    count: u64,
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<()> {
        if pred.len() != gt.len() || gt.len() != valid.len() {
            return Err(Error::dim("depth maps and mask differ in length"));
        }
        for ((&a, &b), &v) in pred.iter().zip(gt).zip(valid) {
            if !v {
                continue;
            }
            if !(b > 0.0) {
                return Err(Error::Data(format!("non-positive ground-truth depth {b}")));
            }
            self.rel_sum += (a - b).abs() / b;
            if a > 0.0 && (a / b).max(b / a) < 1.25 {
                self.within += 1;
            }
            self.count += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.rel_sum += other.rel_sum;
        self.within += other.within;
        self.count += other.count;
    }

    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.count == 0 {
            return Err(Error::param("no valid depth pixels"));
        }
        Ok((
            self.rel_sum / self.count as f64,
            self.within as f64 / self.count as f64,
        ))
    }
}

/// `(AbsRel, δ₁)` over valid pixels.
pub fn depth_metrics(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<(f64, f64)> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt, valid)?;
    acc.finish()
}

pub const NORMAL_THRESHOLD_DEG: f64 = 11.25;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormalAccumulator {
    deg_sum: f64,
    below: u64,
    count: u64,
}

impl NormalAccumulator {
    pub fn add(&mut self, pred: &[[f64; 3]], gt: &[[f64; 3]], valid: &[bool]) -> Result<()> {
        if pred.len() != gt.len() || gt.len() != valid.len() {
            return Err(Error::dim("normal maps and mask differ in length"));
        }
        for ((a, b), &v) in pred.iter().zip(gt).zip(valid) {
            if !v {
                continue;
            }
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Data("zero-norm normal on a valid pixel".into()));
            }
            let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
            let deg = cos.clamp(-1.0, 1.0).acos().to_degrees();
            self.deg_sum += deg;
            if deg < NORMAL_THRESHOLD_DEG {
                self.below += 1;
            }
            self.count += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.deg_sum += other.deg_sum;
        self.below += other.below;
        self.count += other.count;
    }

    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.count == 0 {
            return Err(Error::param("no valid normal pixels"));
        }
        Ok((
            self.deg_sum / self.count as f64,
            self.below as f64 / self.count as f64,
        ))
    }
}

/// `(mean angular error in degrees, fraction below 11.25°)`.
pub fn normal_metrics(pred: &[[f64; 3]], gt: &[[f64; 3]], valid: &[bool]) -> Result<(f64, f64)> {
    let mut acc = NormalAccumulator::default();
    acc.add(pred, gt, valid)?;
    acc.finish()
}

/// Scores for one method. Tasks without a head are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub miou_all: Option<f64>,
    pub miou_mo: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub abs_rel: Option<f64>,
    pub delta1: Option<f64>,
    pub mean_angular_deg: Option<f64>,
    pub pct_below_11_25: Option<f64>,
}
