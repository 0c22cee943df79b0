use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::binary::{AtomicWriter, OffsetReader};
use crate::error::Result;
use crate::feature_space::FeatureSequence;

pub const FEATURE_MAGIC: &[u8; 8] = b"FFORESGT";
pub const FEATURE_VERSION: u32 = 1;
pub const DTYPE_F32_LE: u32 = 0;

/// Everything before the payload of a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFileHeader {
    pub version: u32,
    pub dtype: u32,
    pub dims: [usize; 4],
    pub frame_ids: Vec<i64>,
    pub meta: Map<String, Value>,
    /// Byte offset of the first payload value.
    pub payload_offset: u64,
}

fn read_header_from(r: &mut OffsetReader) -> Result<FeatureFileHeader> {
    r.magic(FEATURE_MAGIC)?;
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        r.offset -= 4;
        return r.fail(format!("unsupported version {version}, expected {FEATURE_VERSION}"));
    }
    let dtype = r.u32("dtype")?;
    if dtype != DTYPE_F32_LE {
        r.offset -= 4;
        return r.fail(format!("unsupported dtype code {dtype}"));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.u64("dims")? as usize;
    }
    let n = dims[0] as u64;
    if n.saturating_mul(8) > r.remaining() {
        return r.fail(format!("truncated frame ids: {n} frames declared"));
    }
    let frame_ids = (0..n).map(|_| r.i64("frame ids")).collect::<Result<Vec<_>>>()?;
    let meta_len = r.u64("meta length")?;
    let meta_at = r.offset;
    let meta_bytes = r.bytes(meta_len, "meta")?;
    let meta: Map<String, Value> = match serde_json::from_slice(&meta_bytes) {
        Ok(m) => m,
        Err(e) => {
            r.offset = meta_at;
            return r.fail(format!("meta is not a JSON object: {e}"));
        }
    };
    Ok(FeatureFileHeader {
        version,
        dtype,
        dims,
        frame_ids,
        meta,
        payload_offset: r.offset,
    })
}

/// Reads only the header; the payload is never touched.
pub fn read_feature_header(path: &Path) -> Result<FeatureFileHeader> {
    read_header_from(&mut OffsetReader::open(path)?)
}

pub fn load_features(path: &Path) -> Result<FeatureSequence<f32>> {
    let mut r = OffsetReader::open(path)?;
    let h = read_header_from(&mut r)?;
    let count = h
        .dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
    let Some(count) = count.filter(|c| c.checked_mul(4).is_some()) else {
        return r.fail("dims overflow");
    };
    if count * 4 != r.remaining() {
        return r.fail(format!(
            "payload holds {} bytes, dims {:?} need {}",
            r.remaining(),
            h.dims,
            count * 4
        ));
    }
    let at = r.offset;
    let data = r.f32s(count as usize, "payload")?;
    r.finish()?;
    let seq = FeatureSequence::new(data, h.dims, h.frame_ids).map_err(|e| {
        crate::Error::Format {
            offset: at,
            message: e.to_string(),
        }
    })?;
    Ok(seq.with_meta(h.meta))
}

pub fn save_features(path: &Path, f: &FeatureSequence<f32>) -> Result<()> {
    let mut w = AtomicWriter::create(path)?;
    w.put(FEATURE_MAGIC)?;
    w.put(&FEATURE_VERSION.to_le_bytes())?;
    w.put(&DTYPE_F32_LE.to_le_bytes())?;
    for d in f.dims() {
        w.put(&(d as u64).to_le_bytes())?;
    }
    for id in f.frame_ids() {
        w.put(&id.to_le_bytes())?;
    }
    let meta = serde_json::to_vec(f.meta())?;
    w.put(&(meta.len() as u64).to_le_bytes())?;
    w.put(&meta)?;
    w.f32s(f.data())?;
    w.commit()
}
