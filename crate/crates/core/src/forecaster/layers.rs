//! Forward and backward kernels over row-major token matrices `[rows, d]`.

use super::weights::{Attention, LayerNorm, Linear, Mlp};
use crate::real::{gemm, Mat, Real};

const LN_EPS: f64 = 1e-5;

pub(crate) fn linear_fwd<T: Real>(x: &[T], rows: usize, lin: &Linear<T>) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * lin.d_out);
    for _ in 0..rows {
        y.extend_from_slice(&lin.bias);
    }
    gemm(
        Mat::new(x, rows, lin.d_in),
        Mat::new(&lin.weight, lin.d_out, lin.d_in).t(),
        &mut y,
        true,
    );
    y
}

/// Accumulates parameter gradients into `grad` and returns `dL/dx`.
pub(crate) fn linear_bwd<T: Real>(
    x: &[T],
    rows: usize,
    lin: &Linear<T>,
    dy: &[T],
    grad: &mut Linear<T>,
) -> Vec<T> {
    gemm(
        Mat::new(dy, rows, lin.d_out).t(),
        Mat::new(x, rows, lin.d_in),
        &mut grad.weight,
        true,
    );
    for row in dy.chunks_exact(lin.d_out) {
        for (g, v) in grad.bias.iter_mut().zip(row) {
            *g += *v;
        }
    }
    let mut dx = vec![T::zero(); rows * lin.d_in];
    gemm(
        Mat::new(dy, rows, lin.d_out),
        Mat::new(&lin.weight, lin.d_out, lin.d_in),
        &mut dx,
        false,
    );
    dx
}

pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub(crate) fn layer_norm_fwd<T: Real>(x: &[T], d: usize, ln: &LayerNorm<T>) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / d;
    let eps = T::lit(LN_EPS);
    let dn = T::from_usize(d).unwrap();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for ((xr, yr), hr) in x
        .chunks_exact(d)
        .zip(y.chunks_exact_mut(d))
        .zip(xhat.chunks_exact_mut(d))
    {
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let r = T::one() / (var + eps).sqrt();
        for k in 0..d {
            hr[k] = (xr[k] - mean) * r;
            yr[k] = hr[k] * ln.gamma[k] + ln.beta[k];
        }
        rstd.push(r);
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_bwd<T: Real>(
    dy: &[T],
    d: usize,
    cache: &LnCache<T>,
    ln: &LayerNorm<T>,
    grad: &mut LayerNorm<T>,
) -> Vec<T> {
    let dn = T::from_usize(d).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for (((dyr, hr), dxr), &r) in dy
        .chunks_exact(d)
        .zip(cache.xhat.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(&cache.rstd)
    {
        let mut mean_g = T::zero();
        let mut mean_gh = T::zero();
        for k in 0..d {
            grad.gamma[k] += dyr[k] * hr[k];
            grad.beta[k] += dyr[k];
            dxhat[k] = dyr[k] * ln.gamma[k];
            mean_g += dxhat[k];
            mean_gh += dxhat[k] * hr[k];
        }
        mean_g /= dn;
        mean_gh /= dn;
        for k in 0..d {
            dxr[k] = r * (dxhat[k] - mean_g - hr[k] * mean_gh);
        }
    }
    dx
}

/// Which token axis an attention pass runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionAxis {
    /// Across frames, one group per spatial cell.
    Temporal,
    /// Across cells, one group per frame.
    Spatial,
}

/// Token `i` of group `g` lives at row `g * group_stride + i * item_stride`.
#[derive(Clone, Copy)]
struct Groups {
    count: usize,
    len: usize,
    group_stride: usize,
    item_stride: usize,
}

impl Groups {
    fn new(axis: AttentionAxis, frames: usize, cells: usize) -> Self {
        match axis {
            AttentionAxis::Temporal => Groups {
                count: cells,
                len: frames,
                group_stride: 1,
                item_stride: cells,
            },
            AttentionAxis::Spatial => Groups {
                count: frames,
                len: cells,
                group_stride: cells,
                item_stride: 1,
            },
        }
    }

    fn row(&self, g: usize, i: usize) -> usize {
        g * self.group_stride + i * self.item_stride
    }
}

pub(crate) struct AttnCache<T> {
    ln: LnCache<T>,
    h: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[groups, heads, len, len]`
    probs: Vec<T>,
    ctx: Vec<T>,
}

/// `x + O(softmax(QKᵀ/√d_h) V)` over the requested axis, pre-normalised.
pub(crate) fn attention_fwd<T: Real>(
    x: &[T],
    frames: usize,
    cells: usize,
    heads: usize,
    axis: AttentionAxis,
    w: &Attention<T>,
) -> (Vec<T>, AttnCache<T>) {
    let d = w.q.d_in;
    let rows = frames * cells;
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let (h, ln) = layer_norm_fwd(x, d, &w.norm);
    let q = linear_fwd(&h, rows, &w.q);
    let k = linear_fwd(&h, rows, &w.k);
    let v = linear_fwd(&h, rows, &w.v);
    let groups = Groups::new(axis, frames, cells);
    let len = groups.len;
    let mut probs = vec![T::zero(); groups.count * heads * len * len];
    let mut ctx = vec![T::zero(); rows * d];
    let mut scores = vec![T::zero(); len];
    for g in 0..groups.count {
        for head in 0..heads {
            let off = head * dh;
            for i in 0..len {
                let qi = &q[groups.row(g, i) * d + off..][..dh];
                let mut max = T::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &k[groups.row(g, j) * d + off..][..dh];
                    *s = qi.iter().zip(kj).map(|(a, b)| *a * *b).sum::<T>() * scale;
                    max = max.max(*s);
                }
                let mut total = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let p = &mut probs[((g * heads + head) * len + i) * len..][..len];
                let ci = groups.row(g, i) * d + off;
                for j in 0..len {
                    p[j] = scores[j] / total;
                    let vj = &v[groups.row(g, j) * d + off..][..dh];
                    for t in 0..dh {
                        ctx[ci + t] += p[j] * vj[t];
                    }
                }
            }
        }
    }
    let out = linear_fwd(&ctx, rows, &w.o);
    let y = x.iter().zip(&out).map(|(a, b)| *a + *b).collect();
    (
        y,
        AttnCache {
            ln,
            h,
            q,
            k,
            v,
            probs,
            ctx,
        },
    )
}

/// Backpropagates through the residual attention sublayer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_bwd<T: Real>(
    dy: &[T],
    frames: usize,
    cells: usize,
    heads: usize,
    axis: AttentionAxis,
    w: &Attention<T>,
    cache: &AttnCache<T>,
    grad: &mut Attention<T>,
) -> Vec<T> {
    let d = w.q.d_in;
    let rows = frames * cells;
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let dctx = linear_bwd(&cache.ctx, rows, &w.o, dy, &mut grad.o);
    let groups = Groups::new(axis, frames, cells);
    let len = groups.len;
    let mut dq = vec![T::zero(); rows * d];
    let mut dk = vec![T::zero(); rows * d];
    let mut dv = vec![T::zero(); rows * d];
    let mut dp = vec![T::zero(); len];
    for g in 0..groups.count {
        for head in 0..heads {
            let off = head * dh;
            for i in 0..len {
                let ri = groups.row(g, i) * d + off;
                let p = &cache.probs[((g * heads + head) * len + i) * len..][..len];
                let dci = &dctx[ri..ri + dh];
                let mut weighted = T::zero();
                for j in 0..len {
                    let rj = groups.row(g, j) * d + off;
                    let vj = &cache.v[rj..rj + dh];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| *a * *b).sum();
                    weighted += p[j] * dp[j];
                    for t in 0..dh {
                        dv[rj + t] += p[j] * dci[t];
                    }
                }
                for j in 0..len {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let rj = groups.row(g, j) * d + off;
                    for t in 0..dh {
                        dq[ri + t] += ds * cache.k[rj + t];
                        dk[rj + t] += ds * cache.q[ri + t];
                    }
                }
            }
        }
    }
    let mut dh_total = linear_bwd(&cache.h, rows, &w.q, &dq, &mut grad.q);
    for (lin, glin, dz) in [(&w.k, &mut grad.k, &dk), (&w.v, &mut grad.v, &dv)] {
        let part = linear_bwd(&cache.h, rows, lin, dz, glin);
        for (a, b) in dh_total.iter_mut().zip(&part) {
            *a += *b;
        }
    }
    let dx_norm = layer_norm_bwd(&dh_total, d, &cache.ln, &w.norm, &mut grad.norm);
    dy.iter().zip(&dx_norm).map(|(a, b)| *a + *b).collect()
}

fn gelu<T: Real>(a: T) -> T {
    T::lit(0.5) * a * (T::one() + (a * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(a: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (a * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(a * a) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + a * pdf
}

pub(crate) struct MlpCache<T> {
    ln: LnCache<T>,
    h: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

pub(crate) fn mlp_fwd<T: Real>(x: &[T], rows: usize, w: &Mlp<T>) -> (Vec<T>, MlpCache<T>) {
    let d = w.fc1.d_in;
    let (h, ln) = layer_norm_fwd(x, d, &w.norm);
    let pre = linear_fwd(&h, rows, &w.fc1);
    let act: Vec<T> = pre.iter().map(|&a| gelu(a)).collect();
    let out = linear_fwd(&act, rows, &w.fc2);
    let y = x.iter().zip(&out).map(|(a, b)| *a + *b).collect();
    (y, MlpCache { ln, h, pre, act })
}

pub(crate) fn mlp_bwd<T: Real>(
    dy: &[T],
    rows: usize,
    w: &Mlp<T>,
    cache: &MlpCache<T>,
    grad: &mut Mlp<T>,
) -> Vec<T> {
    let d = w.fc1.d_in;
    let mut dact = linear_bwd(&cache.act, rows, &w.fc2, dy, &mut grad.fc2);
    for (g, &a) in dact.iter_mut().zip(&cache.pre) {
        *g *= gelu_grad(a);
    }
    let dh = linear_bwd(&cache.h, rows, &w.fc1, &dact, &mut grad.fc1);
    let dx_norm = layer_norm_bwd(&dh, d, &cache.ln, &w.norm, &mut grad.norm);
    dy.iter().zip(&dx_norm).map(|(a, b)| *a + *b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        // GELU(1) = 0.5 * (1 + erf(1/sqrt 2)) = 0.8413447460685429
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert_eq!(gelu(0.0f64), 0.0);
        for &a in &[-2.0f64, -0.3, 0.0, 0.7, 3.0] {
            let e = 1e-6;
            let fd = (gelu(a + e) - gelu(a - e)) / (2.0 * e);
            assert!((fd - gelu_grad(a)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_output_is_standardised() {
        let x = [1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 5.0];
        let ln = LayerNorm {
            gamma: vec![1.0; 4],
            beta: vec![0.0; 4],
        };
        let (y, _) = layer_norm_fwd(&x, 4, &ln);
        for row in y.chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
