use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::binary::{read_json, write_json};
use super::features::{load_features, save_features};
use crate::error::{Error, Result};
use crate::evaluation::{EvalItem, Task, DEFAULT_IGNORE};
use crate::feature_space::FeatureSequence;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURE_EXT: &str = "feat";

pub const CLASS_NAMES: [&str; 4] = ["sky", "ground", "vehicle", "pedestrian"];
pub const MOVABLE: [u32; 2] = [2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// Parameters of the moving-blob scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub sequences: usize,
    /// The first `train_sequences` go to the train split, the rest to eval.
    pub train_sequences: usize,
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    pub blobs: usize,
    /// Inclusive range of blob side lengths in cells.
    pub blob_size: [usize; 2],
    /// Velocity choices in cells per frame, `[row, col]`; each blob draws
    /// one uniformly.
    pub velocities: Vec<[f64; 2]>,
    pub noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            sequences: 80,
            train_sequences: 64,
            frames: 21,
            grid_h: 8,
            grid_w: 8,
            channels: 32,
            blobs: 2,
            blob_size: [2, 3],
            velocities: vec![[0.0, 1.0 / 3.0], [0.0, -1.0 / 3.0]],
            noise: 0.05,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::param(format!("scene spec: {m}")));
        if self.sequences == 0 || self.frames == 0 || self.grid_h < 2 || self.grid_w < 1 {
            return bad("sequences, frames and grid must be positive (grid_h >= 2)");
        }
        if self.train_sequences > self.sequences {
            return bad("train_sequences exceeds sequences");
        }
        if self.channels < CLASS_NAMES.len() + 1 {
            return bad("need more channels than classes + 1");
        }
        let [lo, hi] = self.blob_size;
        if lo == 0 || lo > hi || hi > self.grid_h.min(self.grid_w) {
            return bad("blob_size must satisfy 1 <= min <= max <= grid");
        }
        if self.velocities.is_empty() || self.velocities.iter().flatten().any(|v| !v.is_finite()) {
            return bad("velocities must be a non-empty list of finite pairs");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be >= 0");
        }
        Ok(())
    }
}

/// One rendered blob trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobTrack {
    pub class: u32,
    pub size: usize,
    /// Top-left corner at frame 0, `[row, col]`, in cells.
    pub origin: [f64; 2],
    /// Cells per frame, `[row, col]`.
    pub velocity: [f64; 2],
}

impl BlobTrack {
    /// Integer top-left corner at `frame`, wrapped onto the grid.
    pub fn corner(&self, frame: i64, h: usize, w: usize) -> [usize; 2] {
        let wrap = |p: f64, n: usize| (p.floor() as i64).rem_euclid(n as i64) as usize;
        [
            wrap(self.origin[0] + self.velocity[0] * frame as f64, h),
            wrap(self.origin[1] + self.velocity[1] * frame as f64, w),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub name: String,
    pub split: Split,
    pub features: FeatureSequence<f32>,
    pub targets: BTreeMap<Task, FeatureSequence<f32>>,
    pub blobs: Vec<BlobTrack>,
}

impl SyntheticSequence {
    pub fn eval_item(&self) -> EvalItem {
        EvalItem {
            features: self.features.clone(),
            targets: self.targets.clone(),
        }
    }
}

struct Palette {
    signatures: Vec<Vec<f64>>,
    gradient: Vec<f64>,
}

fn smooth_vector(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.3..1.0),
                rng.random_range(0.5..4.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    (0..c)
        .map(|i| {
            let x = i as f64 / c as f64 * std::f64::consts::TAU;
            waves.iter().map(|(a, f, p)| a * (f * x + p).cos()).sum::<f64>() / 1.5
        })
        .collect()
}

fn palette(seed: u64, c: usize) -> Palette {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_C0_10_55);
    Palette {
        signatures: (0..CLASS_NAMES.len()).map(|_| smooth_vector(&mut rng, c)).collect(),
        gradient: smooth_vector(&mut rng, c),
    }
}

/// Background depth: linear in the row coordinate so that a linear head on
/// the features can represent it exactly.
fn depth_of(class: u32, rho: f64) -> f64 {
    match class {
        0 => 45.0 - 20.0 * rho,
        1 => 12.0 - 20.0 * rho,
        2 => 6.0,
        _ => 8.0,
    }
}

fn normal_of(class: u32) -> [f64; 3] {
    match class {
        0 => [0.0, 0.0, 1.0],
        1 => [0.0, 1.0, 0.0],
        2 => [0.6, 0.0, 0.8],
        _ => [-0.6, 0.0, 0.8],
    }
}

/// Per-cell class labels for one frame: sky above the horizon, ground
/// below, blobs painted in order on top.
pub fn render_labels(blobs: &[BlobTrack], frame: i64, h: usize, w: usize) -> Vec<u32> {
    let mut labels: Vec<u32> = (0..h * w).map(|i| u32::from(i / w >= h / 2)).collect();
    for b in blobs {
        let [r0, c0] = b.corner(frame, h, w);
        for dr in 0..b.size {
            for dc in 0..b.size {
                labels[((r0 + dr) % h) * w + (c0 + dc) % w] = b.class;
            }
        }
    }
    labels
}

fn target_meta(task: Task) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("task".into(), json!(task));
    if task == Task::Segmentation {
        m.insert("class_count".into(), json!(CLASS_NAMES.len()));
        m.insert("class_names".into(), json!(CLASS_NAMES));
        m.insert("ignore_value".into(), json!(DEFAULT_IGNORE));
        m.insert("movable".into(), json!(MOVABLE));
    }
    m
}

/// Renders moving-blob scenes directly into feature space, with aligned
/// segmentation, depth and normal targets. Bit-identical for a fixed seed.
pub fn generate_synthetic_corpus(spec: &SceneSpec, seed: u64) -> Result<Vec<SyntheticSequence>> {
    spec.validate()?;
    let pal = palette(seed, spec.channels);
    let (h, w, c, n) = (spec.grid_h, spec.grid_w, spec.channels, spec.frames);
    let ids: Vec<i64> = (0..n as i64).collect();
    (0..spec.sequences)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(index as u64 + 1));
            let blobs: Vec<BlobTrack> = (0..spec.blobs)
                .map(|_| BlobTrack {
                    class: MOVABLE[rng.random_range(0..MOVABLE.len())],
                    size: rng.random_range(spec.blob_size[0]..=spec.blob_size[1]),
                    origin: [rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)],
                    velocity: spec.velocities[rng.random_range(0..spec.velocities.len())],
                })
                .collect();
            let mut feats = Vec::with_capacity(n * h * w * c);
            let mut seg = Vec::with_capacity(n * h * w);
            let mut depth = Vec::with_capacity(n * h * w);
            let mut normals = Vec::with_capacity(n * h * w * 3);
            for &t in &ids {
                let labels = render_labels(&blobs, t, h, w);
                for (cell, &k) in labels.iter().enumerate() {
                    let rho = (cell / w) as f64 / (h - 1) as f64 - 0.5;
                    let bg = if k < 2 { rho } else { 0.0 };
                    for ch in 0..c {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        let v = pal.signatures[k as usize][ch] + bg * pal.gradient[ch] + spec.noise * eps;
                        feats.push(v as f32);
                    }
                    seg.push(k as f32);
                    depth.push(depth_of(k, rho) as f32);
                    normals.extend(normal_of(k).map(|x| x as f32));
                }
            }
            let name = format!("seq_{index:04}");
            let mut meta = Map::new();
            meta.insert("source".into(), json!("synthetic"));
            meta.insert("seed".into(), json!(seed));
            meta.insert("index".into(), json!(index));
            meta.insert("blobs".into(), serde_json::to_value(&blobs)?);
            let features = FeatureSequence::new(feats, [n, h, w, c], ids.clone())?.with_meta(meta);
            let mut targets = BTreeMap::new();
            for (task, data, ch) in [
                (Task::Segmentation, seg, 1),
                (Task::Depth, depth, 1),
                (Task::Normals, normals, 3),
            ] {
                let t = FeatureSequence::new(data, [n, h, w, ch], ids.clone())?.with_meta(target_meta(task));
                targets.insert(task, t);
            }
            Ok(SyntheticSequence {
                split: if index < spec.train_sequences { Split::Train } else { Split::Eval },
                name,
                features,
                targets,
                blobs,
            })
        })
        .collect()
}

/// One sequence in a corpus directory; paths are relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    pub features: PathBuf,
    #[serde(default)]
    pub targets: BTreeMap<Task, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sequences: Vec<ManifestEntry>,
    #[serde(default)]
    pub spec: Option<SceneSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn task_dir(task: Task) -> &'static str {
    match task {
        Task::Segmentation => "seg",
        Task::Depth => "depth",
        Task::Normals => "normals",
    }
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.sequences.iter().filter(move |e| e.split == split)
    }
}

/// Writes features to `features/`, targets to `targets/{seg,depth,normals}/`
/// and the manifest to `manifest.json`.
pub fn write_corpus(dir: &Path, seqs: &[SyntheticSequence], spec: Option<&SceneSpec>, seed: Option<u64>) -> Result<Manifest> {
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(&dir.join("features"))?;
    let mut entries = Vec::new();
    for s in seqs {
        let file = format!("{}.{FEATURE_EXT}", s.name);
        let rel = PathBuf::from("features").join(&file);
        save_features(&dir.join(&rel), &s.features)?;
        let mut targets = BTreeMap::new();
        for (task, t) in &s.targets {
            let sub = PathBuf::from("targets").join(task_dir(*task));
            mkdir(&dir.join(&sub))?;
            let rel = sub.join(&file);
            save_features(&dir.join(&rel), t)?;
            targets.insert(*task, rel);
        }
        entries.push(ManifestEntry {
            name: s.name.clone(),
            split: s.split,
            features: rel,
            targets,
        });
    }
    let manifest = Manifest {
        version: 1,
        sequences: entries,
        spec: spec.cloned(),
        seed,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Feature files under `dir`: the manifest's split when one exists,
/// otherwise every `*.feat` file in name order.
pub fn load_sequences(dir: &Path, split: Split) -> Result<Vec<(String, FeatureSequence<f32>)>> {
    if dir.join(MANIFEST_FILE).exists() {
        let m = Manifest::load(dir)?;
        return m
            .entries(split)
            .map(|e| Ok((e.name.clone(), load_features(&dir.join(&e.features))?)))
            .collect();
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == FEATURE_EXT))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            Ok((name, load_features(p)?))
        })
        .collect()
}

/// Evaluation items (features plus every listed target) of one split.
pub fn load_eval_items(dir: &Path, split: Split) -> Result<Vec<EvalItem>> {
    let m = Manifest::load(dir)?;
    m.entries(split)
        .map(|e| {
            let features = load_features(&dir.join(&e.features))?;
            let targets = e
                .targets
                .iter()
                .map(|(t, p)| Ok((*t, load_features(&dir.join(p))?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok(EvalItem { features, targets })
        })
        .collect()
}
