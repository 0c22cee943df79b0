use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::real::{gemm, Mat, Real};

/// Tokens per accumulation chunk. Fixed so that the covariance sum is
/// independent of the number of worker threads.
const CHUNK_TOKENS: usize = 4096;

/// Linear map between the concatenated multi-layer feature space and the
/// compressed target space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `[d_out, c_in]`, orthonormal rows ordered by decreasing variance.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// Trace of the fitted covariance.
    pub total_variance: f64,
    pub c_in: usize,
    pub d_out: usize,
}

/// Fits PCA on a row-major `[m, c_in]` token matrix.
///
/// Eigendecomposes the (1/m-normalised) covariance of the centred tokens,
/// keeps the top `d_out` directions and flips each so its largest-magnitude
/// entry is positive.
pub fn fit_pca<T: Real>(tokens: &[T], c_in: usize, d_out: usize) -> Result<PcaModel> {
    if c_in == 0 || tokens.len() % c_in != 0 {
        return Err(Error::dim(format!(
            "token buffer of {} values is not a multiple of {c_in} channels",
            tokens.len()
        )));
    }
    let m = tokens.len() / c_in;
    if d_out == 0 || d_out > m.min(c_in) {
        return Err(Error::param(format!(
            "d_out = {d_out} must lie in 1..={} (m = {m}, c_in = {c_in})",
            m.min(c_in)
        )));
    }
    if tokens.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite token value".into()));
    }

    let chunks: Vec<&[T]> = tokens.chunks(CHUNK_TOKENS * c_in).collect();
    let partial_sums: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut s = vec![0.0f64; c_in];
            for row in chunk.chunks_exact(c_in) {
                for (acc, v) in s.iter_mut().zip(row) {
                    *acc += v.to_f64().unwrap();
                }
            }
            s
        })
        .collect();
    let mut mean = vec![0.0f64; c_in];
    for s in &partial_sums {
        for (acc, v) in mean.iter_mut().zip(s) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);

    let partial_cov: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|chunk| {
            let rows = chunk.len() / c_in;
            let centred: Vec<f64> = chunk
                .chunks_exact(c_in)
                .flat_map(|row| row.iter().zip(&mean).map(|(v, mu)| v.to_f64().unwrap() - mu))
                .collect();
            let mut cov = vec![0.0f64; c_in * c_in];
            let x = Mat::new(&centred, rows, c_in);
            gemm(x.t(), x, &mut cov, false);
            cov
        })
        .collect();
    let mut cov = vec![0.0f64; c_in * c_in];
    for part in &partial_cov {
        for (acc, v) in cov.iter_mut().zip(part) {
            *acc += v;
        }
    }
    // Symmetrise exactly before handing to the eigensolver.
    for i in 0..c_in {
        for j in 0..i {
            let v = 0.5 * (cov[i * c_in + j] + cov[j * c_in + i]) / m as f64;
            cov[i * c_in + j] = v;
            cov[j * c_in + i] = v;
        }
        cov[i * c_in + i] /= m as f64;
    }
    let total_variance: f64 = (0..c_in).map(|i| cov[i * c_in + i]).sum();

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(c_in, c_in, &cov));
    let mut order: Vec<usize> = (0..c_in).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = top * 1e-12;

    let mut components = Vec::with_capacity(d_out * c_in);
    let mut explained_variance = Vec::with_capacity(d_out);
    for &idx in order.iter().take(d_out) {
        let col = eig.eigenvectors.column(idx);
        let norm = col.norm();
        let mut row: Vec<f64> = col.iter().map(|v| v / norm).collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1.abs() {
                    (i, *v)
                } else {
                    best
                }
            })
            .1;
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend(row);
        let lambda = eig.eigenvalues[idx];
        explained_variance.push(if lambda > floor { lambda } else { 0.0 });
    }
    // Clamping can only break monotonicity at the zero boundary; enforce it.
    for i in 1..explained_variance.len() {
        if explained_variance[i] > explained_variance[i - 1] {
            explained_variance[i] = explained_variance[i - 1];
        }
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        c_in,
        d_out,
    })
}

impl PcaModel {
    /// Projects every token: `components · (t − mean)`.
    pub fn encode<T: Real>(&self, f: &FeatureSequence<T>) -> Result<FeatureSequence<T>> {
        if f.channels() != self.c_in {
            return Err(Error::dim(format!(
                "feature channels {} != PCA input channels {}",
                f.channels(),
                self.c_in
            )));
        }
        let out = self.encode_tokens(f.data())?;
        let [n, h, w, _] = f.dims();
        Ok(FeatureSequence::new(out, [n, h, w, self.d_out], f.frame_ids().to_vec())?
            .with_meta(f.meta().clone()))
    }

    /// Maps codes back: `componentsᵀ · z + mean`.
    pub fn decode<T: Real>(&self, f: &FeatureSequence<T>) -> Result<FeatureSequence<T>> {
        if f.channels() != self.d_out {
            return Err(Error::dim(format!(
                "code channels {} != PCA output channels {}",
                f.channels(),
                self.d_out
            )));
        }
        let out = self.decode_tokens(f.data())?;
        let [n, h, w, _] = f.dims();
        Ok(FeatureSequence::new(out, [n, h, w, self.c_in], f.frame_ids().to_vec())?
            .with_meta(f.meta().clone()))
    }

    pub fn encode_tokens<T: Real>(&self, tokens: &[T]) -> Result<Vec<T>> {
        if tokens.len() % self.c_in != 0 {
            return Err(Error::dim("token buffer is not a multiple of c_in"));
        }
        let m = tokens.len() / self.c_in;
        let centred: Vec<f64> = tokens
            .chunks_exact(self.c_in)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .map(|(v, mu)| v.to_f64().unwrap() - mu)
            })
            .collect();
        let mut out = vec![0.0f64; m * self.d_out];
        gemm(
            Mat::new(&centred, m, self.c_in),
            Mat::new(&self.components, self.d_out, self.c_in).t(),
            &mut out,
            false,
        );
        Ok(out.into_iter().map(|v| T::from_f64(v).unwrap()).collect())
    }

    pub fn decode_tokens<T: Real>(&self, codes: &[T]) -> Result<Vec<T>> {
        if codes.len() % self.d_out != 0 {
            return Err(Error::dim("code buffer is not a multiple of d_out"));
        }
        let m = codes.len() / self.d_out;
        let z: Vec<f64> = codes.iter().map(|v| v.to_f64().unwrap()).collect();
        let mut out = vec![0.0f64; m * self.c_in];
        for row in out.chunks_exact_mut(self.c_in) {
            row.copy_from_slice(&self.mean);
        }
        gemm(
            Mat::new(&z, m, self.d_out),
            Mat::new(&self.components, self.d_out, self.c_in),
            &mut out,
            true,
        );
        Ok(out.into_iter().map(|v| T::from_f64(v).unwrap()).collect())
    }

    /// Mean over tokens of the squared reconstruction error `‖x − decode(encode(x))‖²`.
    pub fn reconstruction_mse<T: Real>(&self, tokens: &[T]) -> Result<f64> {
        let codes = self.encode_tokens(&tokens.iter().map(|v| v.to_f64().unwrap()).collect::<Vec<_>>())?;
        let recon = self.decode_tokens(&codes)?;
        let m = tokens.len() / self.c_in;
        let sse: f64 = tokens
            .iter()
            .zip(&recon)
            .map(|(x, r)| (x.to_f64().unwrap() - r).powi(2))
            .sum();
        Ok(sse / m as f64)
    }
}

/// Uniform random subsample (without replacement) of up to `max_tokens`
/// tokens pooled from all sequences, in a seeded, deterministic order.
pub fn sample_tokens<T: Real>(
    sequences: &[FeatureSequence<T>],
    max_tokens: usize,
    seed: u64,
) -> Result<(Vec<T>, usize)> {
    let c = sequences
        .first()
        .ok_or_else(|| Error::param("no sequences to sample from"))?
        .channels();
    let mut offsets = Vec::with_capacity(sequences.len());
    let mut total = 0usize;
    for (i, s) in sequences.iter().enumerate() {
        if s.channels() != c {
            return Err(Error::dim(format!(
                "sequence {i} has {} channels, expected {c}",
                s.channels()
            )));
        }
        offsets.push(total);
        total += s.data().len() / c;
    }
    let take = max_tokens.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, total, take).into_vec();
    picks.sort_unstable();
    let mut out = Vec::with_capacity(take * c);
    for p in picks {
        let s = offsets.partition_point(|&o| o <= p) - 1;
        let local = p - offsets[s];
        out.extend_from_slice(&sequences[s].data()[local * c..(local + 1) * c]);
    }
    Ok((out, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(m: usize, c: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m * c)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    #[test]
    fn rank_one_line_captures_all_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir = [1.0, -2.0, 0.5];
        let tokens: Vec<f64> = (0..200)
            .flat_map(|_| {
                let s: f64 = rng.random_range(-3.0..3.0);
                dir.map(|d| 4.0 + s * d)
            })
            .collect();
        let p = fit_pca(&tokens, 3, 1).unwrap();
        assert!((p.explained_variance[0] / p.total_variance - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rows_are_orthonormal_and_sorted() {
        let tokens = gaussian(300, 10, 1);
        let p = fit_pca(&tokens, 10, 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = (0..10)
                    .map(|k| p.components[i * 10 + k] * p.components[j * 10 + k])
                    .sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((dot - e).abs() < 1e-5);
            }
            let row = &p.components[i * 10..(i + 1) * 10];
            let big = row.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
        assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mean_token_encodes_to_zero_and_unit_code_decodes_to_component() {
        let tokens = gaussian(100, 5, 2);
        let p = fit_pca(&tokens, 5, 3).unwrap();
        let z = p.encode_tokens(&p.mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let t: Vec<f64> = p.mean.iter().zip(&p.components[..5]).map(|(m, c)| m + c).collect();
        let z = p.encode_tokens(&t).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && z[1].abs() < 1e-12 && z[2].abs() < 1e-12);
        let back = p.decode_tokens(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(back, p.mean);
        let back = p.decode_tokens(&[1.0, 0.0, 0.0]).unwrap();
        for (b, e) in back.iter().zip(&t) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let tokens = gaussian(4, 3, 0);
        assert!(matches!(fit_pca(&tokens, 3, 4), Err(Error::Parameter(_))));
        assert!(matches!(fit_pca(&tokens, 3, 0), Err(Error::Parameter(_))));
        let p = fit_pca(&tokens, 3, 2).unwrap();
        let f = FeatureSequence::<f64>::zeros([1, 1, 1, 4]).unwrap();
        assert!(matches!(p.encode(&f), Err(Error::Dimension(_))));
        assert!(matches!(p.decode(&f), Err(Error::Dimension(_))));
    }

    #[test]
    fn rank_deficient_pads_zero_variance() {
        // 3 tokens in 5 channels: centred rank is at most 2.
        let tokens = gaussian(3, 5, 9);
        let p = fit_pca(&tokens, 5, 3).unwrap();
        assert_eq!(p.explained_variance[2], 0.0);
        assert!(p.explained_variance[1] > 0.0);
    }

    #[test]
    fn sample_tokens_is_seeded() {
        let s = FeatureSequence::<f32>::new(
            (0..2 * 3 * 3 * 2).map(|v| v as f32).collect(),
            [2, 3, 3, 2],
            vec![0, 1],
        )
        .unwrap();
        let (a, c) = sample_tokens(&[s.clone(), s.clone()], 10, 4).unwrap();
        let (b, _) = sample_tokens(&[s.clone(), s], 10, 4).unwrap();
        assert_eq!(c, 2);
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
    }
}
