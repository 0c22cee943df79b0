use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::metrics::LabelMap;
use crate::error::{Error, Result};
use crate::feature_space::FeatureSequence;
use crate::real::Real;

pub const DEFAULT_IGNORE: u32 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Depth,
    Normals,
}

impl Task {
    pub fn target_channels(self) -> usize {
        match self {
            Task::Segmentation | Task::Depth => 1,
            Task::Normals => 3,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmentation" | "seg" => Ok(Task::Segmentation),
            "depth" => Ok(Task::Depth),
            "normals" => Ok(Task::Normals),
            other => Err(Error::param(format!("unknown task {other:?}"))),
        }
    }
}

/// Label metadata read from a segmentation target file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub class_count: usize,
    pub ignore_value: u32,
    pub movable: Vec<u32>,
}

impl LabelSpec {
    pub fn from_meta<T: Real>(target: &FeatureSequence<T>) -> Result<Self> {
        let meta = target.meta();
        let ignore_value = meta
            .get("ignore_value")
            .and_then(|v| v.as_u64())
            .map_or(DEFAULT_IGNORE, |v| v as u32);
        let class_count = match meta.get("class_count").and_then(|v| v.as_u64()) {
            Some(k) => k as usize,
            None => {
                let max = target
                    .data()
                    .iter()
                    .map(|v| v.to_f64().unwrap() as u32)
                    .filter(|&l| l != ignore_value)
                    .max()
                    .ok_or_else(|| Error::Data("segmentation target has no labelled pixel".into()))?;
                max as usize + 1
            }
        };
        let movable = meta
            .get("movable")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_u64().map(|x| x as u32)).collect())
            .unwrap_or_default();
        Ok(LabelSpec {
            class_count,
            ignore_value,
            movable,
        })
    }
}

/// Linear map from `d_in` feature channels to task outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutHead {
    pub task: Task,
    pub d_in: usize,
    pub d_out: usize,
    /// `[d_out, d_in]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub l2_reg: f64,
    pub labels: Option<LabelSpec>,
}

/// Per-pixel task outputs for one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutput {
    Labels(LabelMap),
    Depth(Vec<f64>),
    Normals(Vec<[f64; 3]>),
}

fn label_of(v: f64, ignore: u32) -> u32 {
    if v < 0.0 {
        ignore
    } else {
        v.round() as u32
    }
}

/// Closed-form ridge regression on `(features, targets)` pairs aligned frame
/// by frame. Inputs and targets are centred, so the bias is unpenalised.
/// Segmentation regresses one-hot codes; invalid pixels are skipped.
pub fn fit_readout<T: Real>(
    features: &[FeatureSequence<T>],
    targets: &[FeatureSequence<T>],
    task: Task,
    l2_reg: f64,
) -> Result<ReadoutHead> {
    if features.len() != targets.len() || features.is_empty() {
        return Err(Error::param(format!(
            "{} feature sequences but {} target sequences",
            features.len(),
            targets.len()
        )));
    }
    if !(l2_reg >= 0.0) {
        return Err(Error::param(format!("l2_reg must be >= 0, got {l2_reg}")));
    }
    let d = features[0].channels();
    let labels = match task {
        Task::Segmentation => Some(LabelSpec::from_meta(&targets[0])?),
        _ => None,
    };
    let k = labels.as_ref().map_or(task.target_channels(), |l| l.class_count);

    let mut rows_x: Vec<f64> = Vec::new();
    let mut rows_y: Vec<f64> = Vec::new();
    for (i, (f, t)) in features.iter().zip(targets).enumerate() {
        let [n, h, w, c] = f.dims();
        if c != d {
            return Err(Error::dim(format!("sequence {i} has {c} channels, expected {d}")));
        }
        if t.dims() != [n, h, w, task.target_channels()] {
            return Err(Error::dim(format!(
                "target {i} has dims {:?}, expected {:?}",
                t.dims(),
                [n, h, w, task.target_channels()]
            )));
        }
        for (tok, y) in f
            .data()
            .chunks_exact(d)
            .zip(t.data().chunks_exact(task.target_channels()))
        {
            let y: Vec<f64> = y.iter().map(|v| v.to_f64().unwrap()).collect();
            match (&labels, task) {
                (Some(spec), _) => {
                    let l = label_of(y[0], spec.ignore_value);
                    if l == spec.ignore_value || l as usize >= k {
                        continue;
                    }
                    let mut one_hot = vec![0.0; k];
                    one_hot[l as usize] = 1.0;
                    rows_y.extend(one_hot);
                }
                (None, Task::Depth) => {
                    if !(y[0] > 0.0) {
                        continue;
                    }
                    rows_y.push(y[0]);
                }
                (None, _) => {
                    if y.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    rows_y.extend(y);
                }
            }
            rows_x.extend(tok.iter().map(|v| v.to_f64().unwrap()));
        }
    }
    let m = rows_x.len() / d;
    if m == 0 {
        return Err(Error::Data("no valid target pixel to fit on".into()));
    }
    let x = DMatrix::from_row_slice(m, d, &rows_x);
    let y = DMatrix::from_row_slice(m, k, &rows_y);
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let xc = DMatrix::from_fn(m, d, |r, c| x[(r, c)] - x_mean[c]);
    let yc = DMatrix::from_fn(m, k, |r, c| y[(r, c)] - y_mean[c]);

    let gram = xc.transpose() * &xc;
    let rhs = xc.transpose() * &yc;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let floor = 1e-12 * top.max(f64::MIN_POSITIVE);
    let mut inv = eig.eigenvalues.clone();
    for v in inv.iter_mut() {
        let shifted = *v + l2_reg;
        if !(shifted > floor) {
            return Err(Error::Numeric(
                "normal equations are singular; use a positive l2_reg".into(),
            ));
        }
        *v = 1.0 / shifted;
    }
    let vt_rhs = eig.eigenvectors.transpose() * rhs;
    let scaled = DMatrix::from_fn(d, k, |r, c| vt_rhs[(r, c)] * inv[r]);
    let w = &eig.eigenvectors * scaled; // [d, k]

    let weight: Vec<f64> = (0..k).flat_map(|o| (0..d).map(move |i| (o, i))).map(|(o, i)| w[(i, o)]).collect();
    let bias: Vec<f64> = (0..k)
        .map(|o| y_mean[o] - (0..d).map(|i| w[(i, o)] * x_mean[i]).sum::<f64>())
        .collect();
    if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ridge solution is not finite".into()));
    }
    Ok(ReadoutHead {
        task,
        d_in: d,
        d_out: k,
        weight,
        bias,
        l2_reg,
        labels,
    })
}

impl ReadoutHead {
    /// Raw linear outputs, `[tokens, d_out]`.
    pub fn linear<T: Real>(&self, tokens: &[T]) -> Result<Vec<f64>> {
        if tokens.len() % self.d_in != 0 {
            return Err(Error::dim(format!(
                "token buffer is not a multiple of {} channels",
                self.d_in
            )));
        }
        let mut out = Vec::with_capacity(tokens.len() / self.d_in * self.d_out);
        for tok in tokens.chunks_exact(self.d_in) {
            for o in 0..self.d_out {
                let row = &self.weight[o * self.d_in..(o + 1) * self.d_in];
                let dot: f64 = row.iter().zip(tok).map(|(a, b)| a * b.to_f64().unwrap()).sum();
                out.push(dot + self.bias[o]);
            }
        }
        Ok(out)
    }

    /// Applies the head to every frame: argmax labels, depth, or unit normals.
    pub fn apply<T: Real>(&self, f: &FeatureSequence<T>) -> Result<Vec<TaskOutput>> {
        let [n, h, w, c] = f.dims();
        if c != self.d_in {
            return Err(Error::dim(format!(
                "head expects {} channels, features have {c}",
                self.d_in
            )));
        }
        (0..n)
            .map(|i| {
                let out = self.linear(f.frame(i))?;
                Ok(match self.task {
                    Task::Segmentation => {
                        let spec = self.labels.as_ref().ok_or_else(|| {
                            Error::param("segmentation head has no label metadata")
                        })?;
                        let labels = out
                            .chunks_exact(self.d_out)
                            .map(|s| {
                                let mut best = 0;
                                for (j, v) in s.iter().enumerate() {
                                    if *v > s[best] {
                                        best = j;
                                    }
                                }
                                best as u32
                            })
                            .collect();
                        TaskOutput::Labels(
                            LabelMap::new(labels, h, w, spec.class_count, spec.ignore_value)?
                                .with_movable(spec.movable.clone()),
                        )
                    }
                    Task::Depth => TaskOutput::Depth(out),
                    Task::Normals => TaskOutput::Normals(
                        out.chunks_exact(3)
                            .map(|v| {
                                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                                if norm > 0.0 {
                                    [v[0] / norm, v[1] / norm, v[2] / norm]
                                } else {
                                    [0.0, 0.0, 1.0]
                                }
                            })
                            .collect(),
                    ),
                })
            })
            .collect()
    }
}

/// Ground-truth maps for one frame of a target sequence.
pub fn target_output<T: Real>(
    target: &FeatureSequence<T>,
    frame: usize,
    task: Task,
    labels: Option<&LabelSpec>,
) -> Result<(TaskOutput, Vec<bool>)> {
    let [_, h, w, c] = target.dims();
    if c != task.target_channels() {
        return Err(Error::dim(format!(
            "{task:?} target needs {} channels, found {c}",
            task.target_channels()
        )));
    }
    let vals: Vec<f64> = target.frame(frame).iter().map(|v| v.to_f64().unwrap()).collect();
    Ok(match task {
        Task::Segmentation => {
            let spec = labels.ok_or_else(|| Error::param("segmentation needs label metadata"))?;
            let l: Vec<u32> = vals.iter().map(|&v| label_of(v, spec.ignore_value)).collect();
            let valid = l.iter().map(|&x| x != spec.ignore_value).collect();
            (
                TaskOutput::Labels(
                    LabelMap::new(l, h, w, spec.class_count, spec.ignore_value)?
                        .with_movable(spec.movable.clone()),
                ),
                valid,
            )
        }
        Task::Depth => {
            let valid = vals.iter().map(|&v| v > 0.0).collect();
            (TaskOutput::Depth(vals), valid)
        }
        Task::Normals => {
            let n: Vec<[f64; 3]> = vals.chunks_exact(3).map(|v| [v[0], v[1], v[2]]).collect();
            let valid = n.iter().map(|v| v.iter().any(|x| *x != 0.0)).collect();
            (TaskOutput::Normals(n), valid)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn seq(data: Vec<f64>, n: usize, h: usize, w: usize, c: usize) -> FeatureSequence<f64> {
        FeatureSequence::new(data, [n, h, w, c], (0..n as i64).collect()).unwrap()
    }

    #[test]
    fn recovers_affine_map() {
        let xs: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 * 0.3 - 1.0 + (i as f64).sin()).collect();
        let ys: Vec<f64> = xs.chunks(2).map(|t| 2.0 * t[0] - 0.5 * t[1] + 3.0).collect();
        let head = fit_readout(&[seq(xs, 1, 3, 4, 2)], &[seq(ys, 1, 3, 4, 1)], Task::Depth, 0.0).unwrap();
        assert!((head.weight[0] - 2.0).abs() < 1e-9);
        assert!((head.weight[1] + 0.5).abs() < 1e-9);
        assert!((head.bias[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn singular_without_regularisation() {
        let xs: Vec<f64> = (0..8).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        let ys: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let f = [seq(xs, 1, 2, 4, 2)];
        let t = [seq(ys, 1, 2, 4, 1)];
        assert!(matches!(fit_readout(&f, &t, Task::Depth, 0.0), Err(Error::Numeric(_))));
        assert!(fit_readout(&f, &t, Task::Depth, 1e-3).is_ok());
    }

    #[test]
    fn segmentation_argmax_and_ignore() {
        let xs: Vec<f64> = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let labels = vec![0.0, 1.0, 0.0, 255.0];
        let mut meta = serde_json::Map::new();
        meta.insert("class_count".into(), json!(2));
        meta.insert("movable".into(), json!([1]));
        let t = seq(labels, 1, 2, 2, 1).with_meta(meta);
        let head = fit_readout(&[seq(xs.clone(), 1, 2, 2, 2)], &[t], Task::Segmentation, 1e-6).unwrap();
        let TaskOutput::Labels(map) = &head.apply(&seq(xs, 1, 2, 2, 2)).unwrap()[0] else {
            panic!()
        };
        assert_eq!(map.labels, vec![0, 1, 0, 1]);
        assert_eq!(map.movable, vec![1]);
    }

    #[test]
    fn normals_are_unit() {
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let ys: Vec<f64> = xs.chunks(2).flat_map(|t| [t[0], t[1], 1.0]).collect();
        let head = fit_readout(&[seq(xs.clone(), 1, 2, 3, 2)], &[seq(ys, 1, 2, 3, 3)], Task::Normals, 1e-8).unwrap();
        let TaskOutput::Normals(n) = &head.apply(&seq(xs, 1, 2, 3, 2)).unwrap()[0] else {
            panic!()
        };
        for v in n {
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) - 1.0).abs() < 1e-12);
        }
    }
}
