use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{DepthAccumulator, IouAccumulator, MetricReport, NormalAccumulator};
use super::readout::{target_output, ReadoutHead, Task, TaskOutput};
use crate::error::{Error, Result};
use crate::feature_space::{FeatureSequence, PcaModel};
use crate::forecaster::ForecasterWeights;
use crate::inference::{copy_last, forecast_next, rollout_with, sliding_window_forecast, RolloutSchedule};

/// Readout heads keyed by task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadSet {
    pub heads: BTreeMap<Task, ReadoutHead>,
}

impl HeadSet {
    pub fn insert(&mut self, head: ReadoutHead) {
        self.heads.insert(head.task, head);
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// One evaluation sequence: raw (uncompressed) features plus dense targets.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub features: FeatureSequence<f32>,
    pub targets: BTreeMap<Task, FeatureSequence<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InferenceMode {
    #[default]
    Direct,
    Sliding { stride_h: usize, stride_w: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub oracle: MetricReport,
    pub copy_last: MetricReport,
    pub prediction: MetricReport,
}

impl PipelineReport {
    pub fn rows(&self) -> [(&'static str, &MetricReport); 3] {
        [
            ("oracle", &self.oracle),
            ("copy_last", &self.copy_last),
            ("prediction", &self.prediction),
        ]
    }

    /// One row per method.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut s = String::from("method,miou_all,miou_mo,abs_rel,delta1,mean_angular_deg,pct_below_11_25\n");
        for (name, r) in self.rows() {
            s.push_str(&format!(
                "{name},{},{},{},{},{},{}\n",
                fmt(r.miou_all),
                fmt(r.miou_mo),
                fmt(r.abs_rel),
                fmt(r.delta1),
                fmt(r.mean_angular_deg),
                fmt(r.pct_below_11_25)
            ));
        }
        s
    }
}

#[derive(Default, Clone)]
struct Accumulators {
    iou: Option<IouAccumulator>,
    depth: DepthAccumulator,
    normals: NormalAccumulator,
}

impl Accumulators {
    fn merge(&mut self, other: &Self) {
        match (&mut self.iou, &other.iou) {
            (Some(a), Some(b)) => a.merge(b),
            (None, Some(b)) => self.iou = Some(b.clone()),
            _ => {}
        }
        self.depth.merge(&other.depth);
        self.normals.merge(&other.normals);
    }

    fn add(&mut self, pred: &TaskOutput, gt: &TaskOutput, valid: &[bool]) -> Result<()> {
        match (pred, gt) {
            (TaskOutput::Labels(p), TaskOutput::Labels(g)) => self
                .iou
                .get_or_insert_with(|| IouAccumulator::new(g.class_count))
                .add(p, g),
            (TaskOutput::Depth(p), TaskOutput::Depth(g)) => self.depth.add(p, g, valid),
            (TaskOutput::Normals(p), TaskOutput::Normals(g)) => self.normals.add(p, g, valid),
            _ => Err(Error::param("prediction and target tasks differ")),
        }
    }

    fn report(&self, heads: &HeadSet) -> Result<MetricReport> {
        let mut r = MetricReport::default();
        if let Some(h) = heads.heads.get(&Task::Segmentation) {
            let acc = self
                .iou
                .as_ref()
                .ok_or_else(|| Error::Data("no segmentation target scored".into()))?;
            r.miou_all = Some(acc.mean(None)?);
            let movable = h.labels.as_ref().map(|l| l.movable.clone()).unwrap_or_default();
            if !movable.is_empty() {
                r.miou_mo = acc.mean(Some(&movable)).ok();
            }
            r.per_class_iou = acc.per_class();
        }
        if heads.heads.contains_key(&Task::Depth) {
            let (a, d) = self.depth.finish()?;
            r.abs_rel = Some(a);
            r.delta1 = Some(d);
        }
        if heads.heads.contains_key(&Task::Normals) {
            let (m, p) = self.normals.finish()?;
            r.mean_angular_deg = Some(m);
            r.pct_below_11_25 = Some(p);
        }
        Ok(r)
    }
}

/// Brings a frame into the head's input space: raw channels or PCA codes.
fn head_input(
    head: &ReadoutHead,
    pca: &PcaModel,
    raw: Option<&FeatureSequence<f32>>,
    codes: Option<&FeatureSequence<f32>>,
) -> Result<FeatureSequence<f32>> {
    if head.d_in == pca.c_in {
        match raw {
            Some(r) => Ok(r.clone()),
            None => pca.decode(codes.unwrap()),
        }
    } else if head.d_in == pca.d_out {
        match codes {
            Some(c) => Ok(c.clone()),
            None => pca.encode(raw.unwrap()),
        }
    } else {
        Err(Error::dim(format!(
            "{:?} head expects {} channels; PCA maps {} -> {}",
            head.task, head.d_in, pca.c_in, pca.d_out
        )))
    }
}

/// Forecasts the schedule's target frame in PCA space.
pub fn predict_target(
    w: &ForecasterWeights<f32>,
    pca: &PcaModel,
    raw: &FeatureSequence<f32>,
    schedule: &RolloutSchedule,
    mode: InferenceMode,
) -> Result<FeatureSequence<f32>> {
    let context = pca.encode(&raw.select_ids(&schedule.context_ids)?)?;
    let out = match mode {
        InferenceMode::Direct => rollout_with(&context, schedule.steps, |c| forecast_next(w, c))?,
        InferenceMode::Sliding { stride_h, stride_w } => rollout_with(&context, schedule.steps, |c| {
            sliding_window_forecast(w, c, w.config.grid_h, w.config.grid_w, stride_h, stride_w)
        })?,
    };
    out.select_ids(&[schedule.target_id])
}

/// Scores the oracle (true target-frame features), copy-last and the
/// forecaster's rollout with the same heads. Confusion counts and error
/// sums are pooled over the whole corpus.
pub fn evaluate_pipeline(
    w: &ForecasterWeights<f32>,
    pca: &PcaModel,
    heads: &HeadSet,
    items: &[EvalItem],
    schedule: &RolloutSchedule,
    mode: InferenceMode,
) -> Result<PipelineReport> {
    if heads.is_empty() {
        return Err(Error::param("no readout heads supplied"));
    }
    if items.is_empty() {
        return Err(Error::param("empty evaluation corpus"));
    }
    let per_item = items
        .par_iter()
        .map(|item| -> Result<[Accumulators; 3]> {
            let raw = &item.features;
            let oracle = raw.select_ids(&[schedule.target_id])?;
            let last = raw.select_ids(&[*schedule.context_ids.last().unwrap()])?;
            let baseline = copy_last(&last)?;
            let pred = predict_target(w, pca, raw, schedule, mode)?;
            let mut acc: [Accumulators; 3] = Default::default();
            for (task, head) in &heads.heads {
                let target = item.targets.get(task).ok_or_else(|| {
                    Error::Data(format!("evaluation item lacks a {task:?} target"))
                })?;
                let idx = target.index_of(schedule.target_id).ok_or_else(|| {
                    Error::Data(format!("{task:?} target lacks frame {}", schedule.target_id))
                })?;
                let (gt, valid) = target_output(target, idx, *task, head.labels.as_ref())?;
                let inputs = [
                    head_input(head, pca, Some(&oracle), None)?,
                    head_input(head, pca, Some(&baseline), None)?,
                    head_input(head, pca, None, Some(&pred))?,
                ];
                for (a, x) in acc.iter_mut().zip(&inputs) {
                    let out = head.apply(x)?;
                    a.add(&out[0], &gt, &valid)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total: [Accumulators; 3] = Default::default();
    for acc in &per_item {
        for (t, a) in total.iter_mut().zip(acc) {
            t.merge(a);
        }
    }
    Ok(PipelineReport {
        oracle: total[0].report(heads)?,
        copy_last: total[1].report(heads)?,
        prediction: total[2].report(heads)?,
    })
}
