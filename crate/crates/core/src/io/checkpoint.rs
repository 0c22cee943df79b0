use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{AtomicWriter, OffsetReader};
use super::pca_file::{read_pca_body, write_pca_body};
use crate::error::{Error, Result};
use crate::feature_space::PcaModel;
use crate::forecaster::{ForecasterConfig, ForecasterWeights};
use crate::training::{OptimizerState, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FFORECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Weights plus whatever is needed to resume training or run evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ForecasterWeights<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub phase: u8,
    pub step: usize,
    pub train: Option<TrainConfig>,
    pub pca: Option<PcaModel>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ForecasterConfig,
    phase: u8,
    step: usize,
    train: Option<TrainConfig>,
    tensors: Vec<(String, usize)>,
    optimizer_step: Option<u64>,
    has_pca: bool,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState<f32>, train: Option<TrainConfig>, pca: Option<PcaModel>) -> Self {
        Checkpoint {
            weights: state.weights.clone(),
            optimizer: Some(state.optimizer.clone()),
            phase: state.phase,
            step: state.step,
            train,
            pca,
        }
    }

    /// Training state to resume from; requires saved optimizer moments.
    pub fn train_state(&self) -> Result<TrainState<f32>> {
        let optimizer = self
            .optimizer
            .clone()
            .ok_or_else(|| Error::param("checkpoint has no optimizer state to resume from"))?;
        Ok(TrainState {
            weights: self.weights.clone(),
            optimizer,
            phase: self.phase,
            step: self.step,
        })
    }

    /// Errors with a remedy when data on an `h × w` grid cannot be fed
    /// to the stored weights directly.
    pub fn ensure_grid(&self, h: usize, w: usize) -> Result<()> {
        let c = &self.weights.config;
        if (c.grid_h, c.grid_w) != (h, w) {
            return Err(Error::param(format!(
                "checkpoint was trained on a {}x{} grid but the data is {h}x{w}; \
                 interpolate the position tables (interpolate_positions, --interp-pos {h},{w}) \
                 or use sliding-window inference",
                c.grid_h, c.grid_w
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        config: ckpt.weights.config.clone(),
        phase: ckpt.phase,
        step: ckpt.step,
        train: ckpt.train.clone(),
        tensors: ckpt
            .weights
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.len()))
            .collect(),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.step),
        has_pca: ckpt.pca.is_some(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = AtomicWriter::create(path)?;
    w.put(CHECKPOINT_MAGIC)?;
    w.put(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.put(&(json.len() as u64).to_le_bytes())?;
    w.put(&json)?;
    let mut sets = vec![&ckpt.weights];
    if let Some(o) = &ckpt.optimizer {
        sets.push(&o.m);
        sets.push(&o.v);
    }
    for set in sets {
        for (_, t) in set.named_tensors() {
            w.f32s(t)?;
        }
    }
    if let Some(p) = &ckpt.pca {
        write_pca_body(&mut w, p)?;
    }
    w.commit()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = OffsetReader::open(path)?;
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.offset -= 4;
        return r.fail(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        ));
    }
    let len = r.u64("header length")?;
    let at = r.offset;
    let header: Header = match serde_json::from_slice(&r.bytes(len, "header")?) {
        Ok(h) => h,
        Err(e) => {
            r.offset = at;
            return r.fail(format!("malformed checkpoint header: {e}"));
        }
    };
    let blank = ForecasterWeights::<f32>::zeros(&header.config).map_err(|e| Error::Format {
        offset: at,
        message: e.to_string(),
    })?;
    let expect: Vec<(String, usize)> = blank
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    if expect != header.tensors {
        r.offset = at;
        return r.fail("tensor table does not match the stored model config");
    }
    let read_set = |r: &mut OffsetReader| -> Result<ForecasterWeights<f32>> {
        let tensors = expect
            .iter()
            .map(|(name, n)| r.f32s(*n, name))
            .collect::<Result<Vec<_>>>()?;
        ForecasterWeights::from_tensors(&header.config, tensors)
    };
    let weights = read_set(&mut r)?;
    let optimizer = match header.optimizer_step {
        Some(step) => Some(OptimizerState {
            m: read_set(&mut r)?,
            v: read_set(&mut r)?,
            step,
        }),
        None => None,
    };
    let pca = if header.has_pca {
        Some(read_pca_body(&mut r)?)
    } else {
        None
    };
    r.finish()?;
    Ok(Checkpoint {
        weights,
        optimizer,
        phase: header.phase,
        step: header.step,
        train: header.train,
        pca,
    })
}
