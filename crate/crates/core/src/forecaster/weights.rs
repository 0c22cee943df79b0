use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ForecasterConfig;
use crate::error::{Error, Result};
use crate::real::Real;

/// Affine map `y = W x + b` with `W` stored row-major as `[d_out, d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Pre-norm multi-head self-attention sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub norm: LayerNorm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub norm: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// One transformer layer: temporal attention, spatial attention, MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub temporal: Attention<T>,
    pub spatial: Attention<T>,
    pub mlp: Mlp<T>,
}

/// Every learnable parameter of the forecaster. The same type doubles as the
/// container for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterWeights<T> {
    pub config: ForecasterConfig,
    pub input_proj: Linear<T>,
    pub mask_token: Vec<T>,
    /// `[seq_frames, d_model]`
    pub pos_temporal: Vec<T>,
    /// `[grid_h * grid_w, d_model]`
    pub pos_spatial: Vec<T>,
    pub blocks: Vec<Block<T>>,
    pub output_proj: Linear<T>,
}

impl<T: Real> Linear<T> {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: vec![T::zero(); d_in * d_out],
            bias: vec![T::zero(); d_out],
            d_in,
            d_out,
        }
    }
}

impl<T: Real> LayerNorm<T> {
    fn identity(d: usize) -> Self {
        LayerNorm {
            gamma: vec![T::one(); d],
            beta: vec![T::zero(); d],
        }
    }
}

impl<T: Real> Attention<T> {
    fn new(d: usize) -> Self {
        Attention {
            norm: LayerNorm::identity(d),
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
        }
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl<T: Real> ForecasterWeights<T> {
    /// Identity norms, zero everything else.
    fn blank(config: &ForecasterConfig) -> Self {
        let d = config.d_model;
        let hid = config.mlp_hidden();
        ForecasterWeights {
            config: config.clone(),
            input_proj: Linear::zeros(config.d_in, d),
            mask_token: vec![T::zero(); d],
            pos_temporal: vec![T::zero(); config.seq_frames * d],
            pos_spatial: vec![T::zero(); config.tokens_per_frame() * d],
            blocks: (0..config.n_layers)
                .map(|_| Block {
                    temporal: Attention::new(d),
                    spatial: Attention::new(d),
                    mlp: Mlp {
                        norm: LayerNorm::identity(d),
                        fc1: Linear::zeros(d, hid),
                        fc2: Linear::zeros(hid, d),
                    },
                })
                .collect(),
            output_proj: Linear::zeros(d, config.d_in),
        }
    }

    /// Identity norms, zero everything else; validates `config`.
    pub fn zeros(config: &ForecasterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::blank(config))
    }

    /// Seeded initialisation: truncated normal (std 0.02) projection weights,
    /// MASK vector and position tables; zero biases, identity norms.
    pub fn init(config: &ForecasterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut w = Self::blank(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for lin in w.linears_mut() {
            for v in lin.weight.iter_mut() {
                *v = T::lit(trunc_normal(&mut rng, 0.02));
            }
        }
        for t in [&mut w.mask_token, &mut w.pos_temporal, &mut w.pos_spatial] {
            for v in t.iter_mut() {
                *v = T::lit(trunc_normal(&mut rng, 0.02));
            }
        }
        Ok(w)
    }

    /// Container of the same shape filled with zeros (norm gains included).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Every parameter drawn uniformly from `[-scale, scale]`; norm gains
    /// are centred on one. Used to exercise all code paths in checks.
    pub fn random(config: &ForecasterConfig, seed: u64, scale: f64) -> Result<Self> {
        config.validate()?;
        let mut w = Self::blank(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in w.tensors_mut() {
            for v in t.iter_mut() {
                *v = T::lit(rng.random_range(-scale..scale));
            }
        }
        for b in &mut w.blocks {
            for g in [&mut b.temporal.norm.gamma, &mut b.spatial.norm.gamma, &mut b.mlp.norm.gamma] {
                g.iter_mut().for_each(|v| *v += T::one());
            }
        }
        Ok(w)
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear<T>> {
        let mut out = vec![&mut self.input_proj];
        for b in &mut self.blocks {
            for a in [&mut b.temporal, &mut b.spatial] {
                out.extend([&mut a.q, &mut a.k, &mut a.v, &mut a.o]);
            }
            out.extend([&mut b.mlp.fc1, &mut b.mlp.fc2]);
        }
        out.push(&mut self.output_proj);
        out
    }

    /// All parameter tensors with stable dotted names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut out: Vec<(String, &Vec<T>)> = vec![
            ("input_proj.weight".into(), &self.input_proj.weight),
            ("input_proj.bias".into(), &self.input_proj.bias),
            ("mask_token".into(), &self.mask_token),
            ("pos_temporal".into(), &self.pos_temporal),
            ("pos_spatial".into(), &self.pos_spatial),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (tag, a) in [("temporal", &b.temporal), ("spatial", &b.spatial)] {
                let p = format!("blocks.{i}.{tag}");
                out.push((format!("{p}.norm.gamma"), &a.norm.gamma));
                out.push((format!("{p}.norm.beta"), &a.norm.beta));
                for (n, l) in [("q", &a.q), ("k", &a.k), ("v", &a.v), ("o", &a.o)] {
                    out.push((format!("{p}.{n}.weight"), &l.weight));
                    out.push((format!("{p}.{n}.bias"), &l.bias));
                }
            }
            let p = format!("blocks.{i}.mlp");
            out.push((format!("{p}.norm.gamma"), &b.mlp.norm.gamma));
            out.push((format!("{p}.norm.beta"), &b.mlp.norm.beta));
            out.push((format!("{p}.fc1.weight"), &b.mlp.fc1.weight));
            out.push((format!("{p}.fc1.bias"), &b.mlp.fc1.bias));
            out.push((format!("{p}.fc2.weight"), &b.mlp.fc2.weight));
            out.push((format!("{p}.fc2.bias"), &b.mlp.fc2.bias));
        }
        out.push(("output_proj.weight".into(), &self.output_proj.weight));
        out.push(("output_proj.bias".into(), &self.output_proj.bias));
        out
    }

    /// Mutable tensors in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = vec![
            &mut self.input_proj.weight,
            &mut self.input_proj.bias,
            &mut self.mask_token,
            &mut self.pos_temporal,
            &mut self.pos_spatial,
        ];
        for b in &mut self.blocks {
            for a in [&mut b.temporal, &mut b.spatial] {
                out.push(&mut a.norm.gamma);
                out.push(&mut a.norm.beta);
                for l in [&mut a.q, &mut a.k, &mut a.v, &mut a.o] {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
            out.push(&mut b.mlp.norm.gamma);
            out.push(&mut b.mlp.norm.beta);
            out.push(&mut b.mlp.fc1.weight);
            out.push(&mut b.mlp.fc1.bias);
            out.push(&mut b.mlp.fc2.weight);
            out.push(&mut b.mlp.fc2.bias);
        }
        out.push(&mut self.output_proj.weight);
        out.push(&mut self.output_proj.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        let src = other.named_tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s.iter()) {
                *a += *b;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn squared_norm(&self) -> T {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn cast<U: Real>(&self) -> ForecasterWeights<U> {
        let mut out = ForecasterWeights::<U>::blank(&self.config);
        let src = self.named_tensors();
        for (dst, (_, s)) in out.tensors_mut().into_iter().zip(src) {
            *dst = s.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect();
        }
        out
    }

    /// Checks every tensor length against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let reference = Self::blank(&self.config);
        if self.blocks.len() != reference.blocks.len() {
            return Err(Error::dim("layer count does not match config"));
        }
        for ((name, t), (_, r)) in self.named_tensors().iter().zip(reference.named_tensors()) {
            if t.len() != r.len() {
                return Err(Error::dim(format!(
                    "{name}: {} values, config implies {}",
                    t.len(),
                    r.len()
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::Data("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Rebuilds weights from tensors listed in [`Self::named_tensors`] order.
    pub fn from_tensors(config: &ForecasterConfig, tensors: Vec<Vec<T>>) -> Result<Self> {
        config.validate()?;
        let mut w = Self::blank(config);
        let slots = w.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::dim(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.len() != t.len() {
                return Err(Error::dim("tensor length does not match config"));
            }
            *slot = t;
        }
        w.validate()?;
        Ok(w)
    }

    /// Bilinearly resamples the spatial position table to a `new_h x new_w`
    /// grid (half-pixel centres, edge clamped). Everything else is copied.
    pub fn interpolate_positions(&self, new_h: usize, new_w: usize) -> Result<Self> {
        if new_h == 0 || new_w == 0 {
            return Err(Error::param("target grid must be at least 1x1"));
        }
        let (old_h, old_w) = (self.config.grid_h, self.config.grid_w);
        let mut out = self.clone();
        if (new_h, new_w) == (old_h, old_w) {
            return Ok(out);
        }
        let d = self.config.d_model;
        let src = |i: usize, new: usize, old: usize| -> (usize, usize, T) {
            let s = ((i as f64 + 0.5) * old as f64 / new as f64 - 0.5).clamp(0.0, (old - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(old - 1);
            (lo, hi, T::lit(s - lo as f64))
        };
        let mut table = vec![T::zero(); new_h * new_w * d];
        for y in 0..new_h {
            let (y0, y1, ty) = src(y, new_h, old_h);
            for x in 0..new_w {
                let (x0, x1, tx) = src(x, new_w, old_w);
                let at = |r: usize, c: usize| &self.pos_spatial[(r * old_w + c) * d..][..d];
                let (a, b, c, e) = (at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1));
                let dst = &mut table[(y * new_w + x) * d..][..d];
                for k in 0..d {
                    let top = a[k] + (b[k] - a[k]) * tx;
                    let bottom = c[k] + (e[k] - c[k]) * tx;
                    dst[k] = top + (bottom - top) * ty;
                }
            }
        }
        out.pos_spatial = table;
        out.config.grid_h = new_h;
        out.config.grid_w = new_w;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ForecasterConfig {
        ForecasterConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_in: 4,
            seq_frames: 3,
            context_frames: 2,
            grid_h: 2,
            grid_w: 2,
            mlp_ratio: 4.0,
        }
    }

    #[test]
    fn param_count_matches_shapes() {
        let w = ForecasterWeights::<f32>::init(&tiny(), 0).unwrap();
        assert_eq!(w.param_count(), tiny().param_count());
        assert_eq!(w.named_tensors().len(), w.clone().tensors_mut().len());
    }

    #[test]
    fn init_is_seeded_and_sparse_where_documented() {
        let a = ForecasterWeights::<f32>::init(&tiny(), 5).unwrap();
        let b = ForecasterWeights::<f32>::init(&tiny(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.input_proj.bias.iter().all(|&v| v == 0.0));
        assert!(a.pos_spatial.iter().all(|v| v.abs() <= 0.04));
        assert!(a.input_proj.weight.iter().all(|v| v.abs() <= 0.04));
        assert!(a.input_proj.weight.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn interpolation_identity_is_bit_exact() {
        let w = ForecasterWeights::<f32>::random(&tiny(), 1, 1.0).unwrap();
        assert_eq!(w.interpolate_positions(2, 2).unwrap(), w);
    }

    #[test]
    fn interpolation_keeps_constant_tables_constant() {
        let mut w = ForecasterWeights::<f64>::random(&tiny(), 1, 1.0).unwrap();
        w.pos_spatial.iter_mut().for_each(|v| *v = 0.75);
        let big = w.interpolate_positions(5, 7).unwrap();
        assert_eq!(big.pos_spatial.len(), 35 * 8);
        assert!(big.pos_spatial.iter().all(|v| (v - 0.75).abs() < 1e-12));
        assert_eq!(big.pos_temporal, w.pos_temporal);
        assert_eq!(big.blocks, w.blocks);
        assert_eq!((big.config.grid_h, big.config.grid_w), (5, 7));
    }

    #[test]
    fn interpolation_center_of_ramp_is_corner_mean() {
        let mut w = ForecasterWeights::<f64>::random(&tiny(), 1, 1.0).unwrap();
        // entry (r, c, k) = 3r + 5c + k
        for r in 0..2 {
            for c in 0..2 {
                for k in 0..8 {
                    w.pos_spatial[(r * 2 + c) * 8 + k] = (3 * r + 5 * c + k) as f64;
                }
            }
        }
        let big = w.interpolate_positions(3, 3).unwrap();
        for k in 0..8 {
            let corners: f64 = (0..4).map(|i| w.pos_spatial[i * 8 + k]).sum::<f64>() / 4.0;
            assert!((big.pos_spatial[4 * 8 + k] - corners).abs() < 1e-6);
        }
    }

    #[test]
    fn from_tensors_round_trip() {
        let w = ForecasterWeights::<f32>::random(&tiny(), 3, 0.5).unwrap();
        let tensors = w.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(ForecasterWeights::from_tensors(&tiny(), tensors).unwrap(), w);
    }
}
