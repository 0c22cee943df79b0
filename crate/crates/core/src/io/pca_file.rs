use std::path::Path;

use super::binary::{AtomicWriter, OffsetReader};
use crate::error::Result;
use crate::feature_space::PcaModel;

pub const PCA_MAGIC: &[u8; 8] = b"FFOREPCA";
pub const PCA_VERSION: u32 = 1;

pub(crate) fn write_pca_body(w: &mut AtomicWriter, pca: &PcaModel) -> Result<()> {
    w.put(&(pca.c_in as u64).to_le_bytes())?;
    w.put(&(pca.d_out as u64).to_le_bytes())?;
    w.f64s(&[pca.total_variance])?;
    w.f64s(&pca.mean)?;
    w.f64s(&pca.components)?;
    w.f64s(&pca.explained_variance)
}

pub(crate) fn read_pca_body(r: &mut OffsetReader) -> Result<PcaModel> {
    let c_in = r.u64("pca input channels")? as usize;
    let d_out = r.u64("pca output channels")? as usize;
    if c_in == 0 || d_out == 0 || d_out > c_in {
        r.offset -= 16;
        return r.fail(format!("invalid pca shape {c_in} -> {d_out}"));
    }
    let need = (1 + c_in + d_out * c_in + d_out) as u64 * 8;
    if need > r.remaining() {
        return r.fail(format!("truncated pca body: need {need} bytes, {} left", r.remaining()));
    }
    let total_variance = r.f64s(1, "total variance")?[0];
    let mean = r.f64s(c_in, "pca mean")?;
    let components = r.f64s(d_out * c_in, "pca components")?;
    let explained_variance = r.f64s(d_out, "explained variance")?;
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        c_in,
        d_out,
    })
}

/// Stores a PCA model as little-endian f64 values.
pub fn save_pca(path: &Path, pca: &PcaModel) -> Result<()> {
    let mut w = AtomicWriter::create(path)?;
    w.put(PCA_MAGIC)?;
    w.put(&PCA_VERSION.to_le_bytes())?;
    write_pca_body(&mut w, pca)?;
    w.commit()
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    let mut r = OffsetReader::open(path)?;
    r.magic(PCA_MAGIC)?;
    let v = r.u32("version")?;
    if v != PCA_VERSION {
        r.offset -= 4;
        return r.fail(format!("unsupported pca version {v}"));
    }
    let pca = read_pca_body(&mut r)?;
    r.finish()?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_space::fit_pca;

    #[test]
    fn round_trip() {
        let tokens: Vec<f64> = (0..300).map(|i| ((i * 13 % 17) as f64).sqrt() - (i as f64 * 0.1).cos()).collect();
        let pca = fit_pca(&tokens, 6, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.pca");
        save_pca(&p, &pca).unwrap();
        assert_eq!(load_pca(&p).unwrap(), pca);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_pca(&p), Err(crate::Error::Format { .. })));
    }
}
