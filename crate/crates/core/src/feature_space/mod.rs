//! Target feature space: multi-layer concatenation and PCA compression.

mod pca;
mod sequence;

pub use pca::{fit_pca, sample_tokens, PcaModel};
pub use sequence::FeatureSequence;

use crate::error::{Error, Result};
use crate::real::Real;

/// Encoder layers tapped by default for 12-layer ViTs (1-based).
pub const DEFAULT_LAYERS: [usize; 4] = [3, 6, 9, 12];

/// Concatenates per-layer features along channels: output channel
/// `l * D_enc + k` is channel `k` of `layers[l]`.
pub fn concat_layers<T: Real>(layers: &[FeatureSequence<T>]) -> Result<FeatureSequence<T>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::param("concat_layers needs at least one layer"))?;
    let [n, h, w, _] = first.dims();
    for (i, l) in layers.iter().enumerate().skip(1) {
        let [ln, lh, lw, _] = l.dims();
        if (ln, lh, lw) != (n, h, w) || l.frame_ids() != first.frame_ids() {
            return Err(Error::dim(format!(
                "layer {i} has shape {:?} / frame ids {:?}, expected [{n}, {h}, {w}, _] / {:?}",
                l.dims(),
                l.frame_ids(),
                first.frame_ids()
            )));
        }
    }
    let total_c: usize = layers.iter().map(|l| l.channels()).sum();
    let mut data = Vec::with_capacity(n * h * w * total_c);
    for t in 0..n * h * w {
        for l in layers {
            let c = l.channels();
            data.extend_from_slice(&l.data()[t * c..(t + 1) * c]);
        }
    }
    Ok(
        FeatureSequence::new(data, [n, h, w, total_c], first.frame_ids().to_vec())?
            .with_meta(first.meta().clone()),
    )
}
