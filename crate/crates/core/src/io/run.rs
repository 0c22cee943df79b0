use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binary::read_json;
use super::corpus::{load_sequences, Split};
use super::pca_file::load_pca;
use crate::error::{Error, Result};
use crate::feature_space::{fit_pca, sample_tokens, FeatureSequence, PcaModel};
use crate::forecaster::{ForecasterConfig, ForecasterWeights};
use crate::inference::Horizon;
use crate::training::{continue_training, extract_clips, LossRecord, TrainConfig, TrainState, TrainingCorpus};

fn default_samples() -> usize {
    100_000
}

fn default_stride() -> i64 {
    3
}

/// Where training data comes from and how it is cut into clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus directory (manifest or plain directory of feature files).
    pub corpus: PathBuf,
    /// Fitted PCA file; fitted on the train split when absent.
    #[serde(default)]
    pub pca: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub pca_samples: usize,
    #[serde(default)]
    pub pca_seed: u64,
    /// Source-frame spacing between consecutive clip frames.
    #[serde(default = "default_stride")]
    pub clip_stride: i64,
}

/// Single declarative document for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ForecasterConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub schedule: Option<Horizon>,
    #[serde(default)]
    pub init_seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(d) = &self.data {
            if d.clip_stride <= 0 {
                return Err(Error::param("data.clip_stride must be >= 1"));
            }
            if d.pca_samples == 0 {
                return Err(Error::param("data.pca_samples must be >= 1"));
            }
        }
        Ok(())
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            if d.corpus.is_relative() {
                d.corpus = base.join(&d.corpus);
            }
            if let Some(p) = d.pca.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::param("run config has no `data` block"))
    }
}

/// Average-pools `f` onto an `h × w` grid; the source grid must be an
/// integer multiple.
pub fn resize_grid<T: crate::real::Real>(f: &FeatureSequence<T>, h: usize, w: usize) -> Result<FeatureSequence<T>> {
    let [_, fh, fw, _] = f.dims();
    if (fh, fw) == (h, w) {
        return Ok(f.clone());
    }
    if h == 0 || w == 0 || fh % h != 0 || fw % w != 0 {
        return Err(Error::dim(format!(
            "cannot pool a {fh}x{fw} grid onto {h}x{w}"
        )));
    }
    f.downsample(fh / h, fw / w)
}

/// Compresses each sequence, pools it onto the model grid and cuts clips.
pub fn prepare_clips(
    seqs: &[FeatureSequence<f32>],
    pca: &PcaModel,
    frames: usize,
    stride: i64,
    grid: (usize, usize),
) -> Result<Vec<FeatureSequence<f32>>> {
    let mut clips = Vec::new();
    for s in seqs {
        let coded = pca.encode(&resize_grid(s, grid.0, grid.1)?)?;
        clips.extend(extract_clips(&coded, frames, stride)?);
    }
    Ok(clips)
}

/// Loads or fits the PCA model of a run.
pub fn run_pca(cfg: &RunConfig, train: &[FeatureSequence<f32>]) -> Result<PcaModel> {
    let d = cfg.data()?;
    let pca = match &d.pca {
        Some(p) => load_pca(p)?,
        None => {
            let (tokens, c) = sample_tokens(train, d.pca_samples, d.pca_seed)?;
            fit_pca(&tokens, c, cfg.model.d_in)?
        }
    };
    if pca.d_out != cfg.model.d_in {
        return Err(Error::dim(format!(
            "PCA produces {} channels but model.d_in is {}",
            pca.d_out, cfg.model.d_in
        )));
    }
    Ok(pca)
}

pub struct TrainOutcome {
    pub state: TrainState<f32>,
    pub curve: Vec<LossRecord>,
    pub pca: PcaModel,
}

/// Trains (or resumes) a run described by `cfg` on its corpus's train split.
pub fn train_from_config(
    cfg: &RunConfig,
    resume: Option<TrainState<f32>>,
    max_steps: Option<usize>,
    pca: Option<PcaModel>,
) -> Result<TrainOutcome> {
    let d = cfg.data()?;
    let seqs: Vec<FeatureSequence<f32>> = load_sequences(&d.corpus, Split::Train)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    if seqs.is_empty() {
        return Err(Error::param(format!("no training sequences in {}", d.corpus.display())));
    }
    let pca = match pca {
        Some(p) => p,
        None => run_pca(cfg, &seqs)?,
    };
    let m = &cfg.model;
    let phase1 = prepare_clips(&seqs, &pca, m.seq_frames, d.clip_stride, (m.grid_h, m.grid_w))?;
    let phase2 = match cfg.train.phase2 {
        Some(p) => Some(prepare_clips(&seqs, &pca, m.seq_frames, d.clip_stride, (p.grid_h, p.grid_w))?),
        None => None,
    };
    let state = match resume {
        Some(s) => s,
        None => TrainState::new(ForecasterWeights::init(m, cfg.init_seed)?),
    };
    let corpus = TrainingCorpus {
        phase1: &phase1,
        phase2: phase2.as_deref(),
    };
    let (state, curve) = continue_training(state, corpus, &cfg.train, max_steps)?;
    Ok(TrainOutcome { state, curve, pca })
}
