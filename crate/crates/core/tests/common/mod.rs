//! Straight-line reference implementations shared by the integration
//! tests: dense per-slice attention, a token-by-token forward pass and a
//! Jacobi eigenvalue solver.
#![allow(dead_code)]

use featcast::forecaster::{Attention, ForecasterConfig, ForecasterWeights, LayerNorm, Linear, MaskPlan};
use featcast::FeatureSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config(n: usize, n_c: usize, h: usize, w: usize) -> ForecasterConfig {
    ForecasterConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_in: 3,
        seq_frames: n,
        context_frames: n_c,
        grid_h: h,
        grid_w: w,
        mlp_ratio: 2.0,
    }
}

pub fn weights(cfg: &ForecasterConfig, seed: u64) -> ForecasterWeights<f64> {
    let mut w = ForecasterWeights::<f64>::random(cfg, seed, 0.4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    for t in [&mut w.mask_token, &mut w.pos_temporal, &mut w.pos_spatial] {
        t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    w
}

pub fn random_seq(dims: [usize; 4], rng: &mut ChaCha8Rng) -> FeatureSequence<f64> {
    let len = dims.iter().product();
    FeatureSequence::new(
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        dims,
        (0..dims[0] as i64).collect(),
    )
    .unwrap()
}

fn linear(x: &[f64], l: &Linear<f64>) -> Vec<f64> {
    (0..l.d_out)
        .map(|o| l.bias[o] + (0..l.d_in).map(|i| l.weight[o * l.d_in + i] * x[i]).sum::<f64>())
        .collect()
}

fn layer_norm(x: &[f64], n: &LayerNorm<f64>) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * inv * n.gamma[i] + n.beta[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Residual multi-head attention among the given tokens only.
pub fn dense_attention(tokens: &[Vec<f64>], a: &Attention<f64>, heads: usize) -> Vec<Vec<f64>> {
    let normed: Vec<Vec<f64>> = tokens.iter().map(|t| layer_norm(t, &a.norm)).collect();
    let q: Vec<Vec<f64>> = normed.iter().map(|t| linear(t, &a.q)).collect();
    let k: Vec<Vec<f64>> = normed.iter().map(|t| linear(t, &a.k)).collect();
    let v: Vec<Vec<f64>> = normed.iter().map(|t| linear(t, &a.v)).collect();
    let d = tokens[0].len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut mixed = vec![0.0; d];
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let logits: Vec<f64> = (0..tokens.len())
                    .map(|j| scale * q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, p) in e.iter().enumerate() {
                    for c in r.clone() {
                        mixed[c] += p / z * v[j][c];
                    }
                }
            }
            let out = linear(&mixed, &a.o);
            t.iter().zip(out).map(|(x, y)| x + y).collect()
        })
        .collect()
}

pub type Grid = Vec<Vec<Vec<Vec<f64>>>>;

pub fn to_grid(f: &FeatureSequence<f64>) -> Grid {
    let [n, h, w, _] = f.dims();
    (0..n)
        .map(|i| (0..h).map(|r| (0..w).map(|c| f.token(i, r, c).to_vec()).collect()).collect())
        .collect()
}

pub fn temporal_oracle(g: &Grid, a: &Attention<f64>, heads: usize) -> Grid {
    let mut out = g.clone();
    for r in 0..g[0].len() {
        for c in 0..g[0][0].len() {
            let slice: Vec<Vec<f64>> = g.iter().map(|fr| fr[r][c].clone()).collect();
            for (i, t) in dense_attention(&slice, a, heads).into_iter().enumerate() {
                out[i][r][c] = t;
            }
        }
    }
    out
}

pub fn spatial_oracle(g: &Grid, a: &Attention<f64>, heads: usize) -> Grid {
    let w = g[0][0].len();
    g.iter()
        .map(|frame| {
            let slice: Vec<Vec<f64>> = frame.iter().flatten().cloned().collect();
            let y = dense_attention(&slice, a, heads);
            y.chunks(w).map(|row| row.to_vec()).collect()
        })
        .collect()
}

pub fn max_diff(a: &Grid, b: &FeatureSequence<f64>) -> f64 {
    let flat: Vec<f64> = a.iter().flatten().flatten().flatten().cloned().collect();
    flat.iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Whole model, token by token.
pub fn forward_oracle(f: &FeatureSequence<f64>, plan: &MaskPlan, w: &ForecasterWeights<f64>) -> Grid {
    let [n, h, wd, _] = f.dims();
    let d = w.config.d_model;
    let mut g: Grid = (0..n)
        .map(|i| {
            (0..h)
                .map(|r| {
                    (0..wd)
                        .map(|c| {
                            let base = if plan.is_masked(i, r, c) {
                                w.mask_token.clone()
                            } else {
                                linear(f.token(i, r, c), &w.input_proj)
                            };
                            let cell = r * wd + c;
                            (0..d)
                                .map(|k| base[k] + w.pos_temporal[i * d + k] + w.pos_spatial[cell * d + k])
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    for b in &w.blocks {
        g = temporal_oracle(&g, &b.temporal, w.config.n_heads);
        g = spatial_oracle(&g, &b.spatial, w.config.n_heads);
        for tok in g.iter_mut().flatten().flatten() {
            let hidden: Vec<f64> = linear(&layer_norm(tok, &b.mlp.norm), &b.mlp.fc1)
                .into_iter()
                .map(gelu)
                .collect();
            let y = linear(&hidden, &b.mlp.fc2);
            tok.iter_mut().zip(y).for_each(|(x, y)| *x += y);
        }
    }
    for tok in g.iter_mut().flatten().flatten() {
        *tok = linear(tok, &w.output_proj);
    }
    g
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// Covariance with 1/m normalisation of a row-major `[m, c]` matrix.
pub fn covariance(x: &[f64], c: usize) -> Vec<Vec<f64>> {
    let m = x.len() / c;
    let mean: Vec<f64> = (0..c).map(|j| (0..m).map(|i| x[i * c + j]).sum::<f64>() / m as f64).collect();
    let mut cov = vec![vec![0.0; c]; c];
    for i in 0..m {
        for a in 0..c {
            for b in 0..c {
                cov[a][b] += (x[i * c + a] - mean[a]) * (x[i * c + b] - mean[b]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v /= m as f64);
    cov
}

/// Seeded random `[n, h, w, c]` sequence in `[-1, 1)`.
pub fn seeded_seq(dims: [usize; 4], seed: u64) -> FeatureSequence<f64> {
    random_seq(dims, &mut ChaCha8Rng::seed_from_u64(seed))
}
