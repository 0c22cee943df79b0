use std::collections::BTreeMap;

use super::layers::{
    attention_bwd, attention_fwd, linear_bwd, linear_fwd, mlp_bwd, mlp_fwd, AttentionAxis,
    AttnCache, MlpCache,
};
use super::weights::{Attention, ForecasterWeights};
use super::MaskPlan;
use crate::error::{Error, Result};
use crate::feature_space::FeatureSequence;
use crate::real::Real;

/// Prediction plus the post-block activations of any tapped layers.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub pred: FeatureSequence<T>,
    /// 1-based layer index → `[N, H, W, d_model]` activations.
    pub tapped: BTreeMap<usize, FeatureSequence<T>>,
}

struct BlockCache<T> {
    temporal: AttnCache<T>,
    spatial: AttnCache<T>,
    mlp: MlpCache<T>,
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct ForwardCache<T> {
    input: Vec<T>,
    mask: Vec<bool>,
    frames: usize,
    blocks: Vec<BlockCache<T>>,
    last_hidden: Vec<T>,
}

fn check_shapes<T: Real>(
    w: &ForecasterWeights<T>,
    f: &FeatureSequence<T>,
    plan: &MaskPlan,
) -> Result<()> {
    let c = &w.config;
    let expect = [c.seq_frames, c.grid_h, c.grid_w, c.d_in];
    if f.dims() != expect {
        let hint = if f.height() != c.grid_h || f.width() != c.grid_w {
            " (interpolate the position table or use sliding-window inference)"
        } else {
            ""
        };
        return Err(Error::dim(format!(
            "input {:?} does not match model {expect:?}{hint}",
            f.dims()
        )));
    }
    if plan.dims() != [c.seq_frames, c.grid_h, c.grid_w] {
        return Err(Error::dim(format!(
            "mask plan {:?} does not match [{}, {}, {}]",
            plan.dims(),
            c.seq_frames,
            c.grid_h,
            c.grid_w
        )));
    }
    Ok(())
}

/// Token embedding: projection of visible tokens (MASK vector for masked
/// ones) plus temporal and spatial position terms. Returns `[rows, d_model]`.
pub(crate) fn embed_raw<T: Real>(w: &ForecasterWeights<T>, input: &[T], mask: &[bool]) -> Vec<T> {
    let c = &w.config;
    let d = c.d_model;
    let hw = c.tokens_per_frame();
    let rows = mask.len();
    let visible: Vec<usize> = (0..rows).filter(|&r| !mask[r]).collect();
    let mut gathered = Vec::with_capacity(visible.len() * c.d_in);
    for &r in &visible {
        gathered.extend_from_slice(&input[r * c.d_in..(r + 1) * c.d_in]);
    }
    let projected = linear_fwd(&gathered, visible.len(), &w.input_proj);
    let mut x = vec![T::zero(); rows * d];
    for (i, &r) in visible.iter().enumerate() {
        x[r * d..(r + 1) * d].copy_from_slice(&projected[i * d..(i + 1) * d]);
    }
    for r in 0..rows {
        let row = &mut x[r * d..(r + 1) * d];
        if mask[r] {
            row.copy_from_slice(&w.mask_token);
        }
        let pt = &w.pos_temporal[(r / hw) * d..][..d];
        let ps = &w.pos_spatial[(r % hw) * d..][..d];
        for k in 0..d {
            row[k] += pt[k] + ps[k];
        }
    }
    x
}

/// Embeds a masked sequence into `[N, H, W, d_model]` tokens.
pub fn embed_tokens<T: Real>(
    f: &FeatureSequence<T>,
    plan: &MaskPlan,
    w: &ForecasterWeights<T>,
) -> Result<FeatureSequence<T>> {
    check_shapes(w, f, plan)?;
    let x = embed_raw(w, f.data(), plan.mask());
    let [n, h, wd, _] = f.dims();
    FeatureSequence::new(x, [n, h, wd, w.config.d_model], f.frame_ids().to_vec())
}

fn attention_on_sequence<T: Real>(
    tokens: &FeatureSequence<T>,
    layer: &Attention<T>,
    n_heads: usize,
    axis: AttentionAxis,
) -> Result<FeatureSequence<T>> {
    let d = tokens.channels();
    if layer.q.d_in != d || n_heads == 0 || d % n_heads != 0 {
        return Err(Error::dim(format!(
            "token width {d} incompatible with layer width {} / {n_heads} heads",
            layer.q.d_in
        )));
    }
    let (y, _) = attention_fwd(
        tokens.data(),
        tokens.frames(),
        tokens.tokens_per_frame(),
        n_heads,
        axis,
        layer,
    );
    FeatureSequence::new(y, tokens.dims(), tokens.frame_ids().to_vec())
}

/// Pre-norm residual self-attention across frames, independently per cell.
pub fn temporal_attention<T: Real>(
    tokens: &FeatureSequence<T>,
    layer: &Attention<T>,
    n_heads: usize,
) -> Result<FeatureSequence<T>> {
    attention_on_sequence(tokens, layer, n_heads, AttentionAxis::Temporal)
}

/// Pre-norm residual self-attention across cells, independently per frame.
pub fn spatial_attention<T: Real>(
    tokens: &FeatureSequence<T>,
    layer: &Attention<T>,
    n_heads: usize,
) -> Result<FeatureSequence<T>> {
    attention_on_sequence(tokens, layer, n_heads, AttentionAxis::Spatial)
}

/// Runs the full model; returns the `[rows, d_in]` prediction and a cache
/// for [`backward_raw`]. `taps` are 1-based layer numbers.
pub(crate) fn forward_raw<T: Real>(
    w: &ForecasterWeights<T>,
    input: &[T],
    mask: &[bool],
    taps: &[usize],
) -> (Vec<T>, ForwardCache<T>, BTreeMap<usize, Vec<T>>) {
    let c = &w.config;
    let frames = c.seq_frames;
    let hw = c.tokens_per_frame();
    let rows = frames * hw;
    let mut x = embed_raw(w, input, mask);
    let mut blocks = Vec::with_capacity(c.n_layers);
    let mut tapped = BTreeMap::new();
    for (i, b) in w.blocks.iter().enumerate() {
        let (x1, temporal) =
            attention_fwd(&x, frames, hw, c.n_heads, AttentionAxis::Temporal, &b.temporal);
        let (x2, spatial) =
            attention_fwd(&x1, frames, hw, c.n_heads, AttentionAxis::Spatial, &b.spatial);
        let (x3, mlp) = mlp_fwd(&x2, rows, &b.mlp);
        blocks.push(BlockCache {
            temporal,
            spatial,
            mlp,
        });
        if taps.contains(&(i + 1)) {
            tapped.insert(i + 1, x3.clone());
        }
        x = x3;
    }
    let pred = linear_fwd(&x, rows, &w.output_proj);
    let cache = ForwardCache {
        input: input.to_vec(),
        mask: mask.to_vec(),
        frames,
        blocks,
        last_hidden: x,
    };
    (pred, cache, tapped)
}

/// Exact reverse-mode gradients given `dL/dpred`. Returns parameter
/// gradients and `dL/dinput`.
pub(crate) fn backward_raw<T: Real>(
    w: &ForecasterWeights<T>,
    cache: &ForwardCache<T>,
    dpred: &[T],
) -> (ForecasterWeights<T>, Vec<T>) {
    let c = &w.config;
    let d = c.d_model;
    let hw = c.tokens_per_frame();
    let frames = cache.frames;
    let rows = frames * hw;
    let mut g = w.zeros_like();
    let mut dx = linear_bwd(&cache.last_hidden, rows, &w.output_proj, dpred, &mut g.output_proj);
    for (i, b) in w.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[i];
        let gb = &mut g.blocks[i];
        dx = mlp_bwd(&dx, rows, &b.mlp, &bc.mlp, &mut gb.mlp);
        dx = attention_bwd(
            &dx,
            frames,
            hw,
            c.n_heads,
            AttentionAxis::Spatial,
            &b.spatial,
            &bc.spatial,
            &mut gb.spatial,
        );
        dx = attention_bwd(
            &dx,
            frames,
            hw,
            c.n_heads,
            AttentionAxis::Temporal,
            &b.temporal,
            &bc.temporal,
            &mut gb.temporal,
        );
    }
    // Embedding stage.
    let visible: Vec<usize> = (0..rows).filter(|&r| !cache.mask[r]).collect();
    let mut dvis = Vec::with_capacity(visible.len() * d);
    let mut xvis = Vec::with_capacity(visible.len() * c.d_in);
    for r in 0..rows {
        let row = &dx[r * d..(r + 1) * d];
        let n = r / hw;
        let s = r % hw;
        for k in 0..d {
            g.pos_temporal[n * d + k] += row[k];
            g.pos_spatial[s * d + k] += row[k];
        }
        if cache.mask[r] {
            for k in 0..d {
                g.mask_token[k] += row[k];
            }
        }
    }
    for &r in &visible {
        dvis.extend_from_slice(&dx[r * d..(r + 1) * d]);
        xvis.extend_from_slice(&cache.input[r * c.d_in..(r + 1) * c.d_in]);
    }
    let dxin = linear_bwd(&xvis, visible.len(), &w.input_proj, &dvis, &mut g.input_proj);
    let mut dinput = vec![T::zero(); rows * c.d_in];
    for (i, &r) in visible.iter().enumerate() {
        dinput[r * c.d_in..(r + 1) * c.d_in].copy_from_slice(&dxin[i * c.d_in..(i + 1) * c.d_in]);
    }
    (g, dinput)
}

/// Predicts every token of `f`; masked positions never read their inputs.
/// `taps` selects 1-based layers whose outputs are returned.
pub fn forward<T: Real>(
    f: &FeatureSequence<T>,
    plan: &MaskPlan,
    w: &ForecasterWeights<T>,
    taps: &[usize],
) -> Result<ForwardOutput<T>> {
    check_shapes(w, f, plan)?;
    if let Some(&bad) = taps.iter().find(|&&t| t == 0 || t > w.config.n_layers) {
        return Err(Error::param(format!(
            "tap layer {bad} outside 1..={}",
            w.config.n_layers
        )));
    }
    let (pred, _, tapped) = forward_raw(w, f.data(), plan.mask(), taps);
    let [n, h, wd, _] = f.dims();
    let ids = f.frame_ids().to_vec();
    let pred = FeatureSequence::new(pred, [n, h, wd, w.config.d_in], ids.clone())?;
    let tapped = tapped
        .into_iter()
        .map(|(l, t)| Ok((l, FeatureSequence::new(t, [n, h, wd, w.config.d_model], ids.clone())?)))
        .collect::<Result<_>>()?;
    Ok(ForwardOutput { pred, tapped })
}
