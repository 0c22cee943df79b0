use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense per-frame token features laid out row-major as `[N, H, W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T = f32> {
    data: Vec<T>,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    frame_ids: Vec<i64>,
    meta: Map<String, Value>,
}

impl<T: Real> FeatureSequence<T> {
    /// Builds a sequence, checking shape, finiteness and frame ordering.
    pub fn new(data: Vec<T>, dims: [usize; 4], frame_ids: Vec<i64>) -> Result<Self> {
        let [n, h, w, c] = dims;
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::dim(format!("all dims must be >= 1, got {dims:?}")));
        }
        if data.len() != n * h * w * c {
            return Err(Error::dim(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if frame_ids.len() != n {
            return Err(Error::dim(format!(
                "{} frame ids for {n} frames",
                frame_ids.len()
            )));
        }
        if frame_ids.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Data(format!(
                "frame ids not strictly increasing: {frame_ids:?}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {i}")));
        }
        Ok(FeatureSequence {
            data,
            n,
            h,
            w,
            c,
            frame_ids,
            meta: Map::new(),
        })
    }

    /// All-zero sequence with frame ids `0..n`.
    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(
            vec![T::zero(); len],
            dims,
            (0..dims[0] as i64).collect(),
        )
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn frames(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn frame_ids(&self) -> &[i64] {
        &self.frame_ids
    }

    pub fn set_frame_ids(&mut self, ids: Vec<i64>) -> Result<()> {
        if ids.len() != self.n || ids.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Data(format!("invalid frame ids {ids:?}")));
        }
        self.frame_ids = ids;
        Ok(())
    }

    pub fn meta(&self) -> &Map<String, Value> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut Map<String, Value> {
        &mut self.meta
    }

    pub fn with_meta(mut self, meta: Map<String, Value>) -> Self {
        self.meta = meta;
        self
    }

    pub fn token(&self, n: usize, h: usize, w: usize) -> &[T] {
        let i = ((n * self.h + h) * self.w + w) * self.c;
        &self.data[i..i + self.c]
    }

    pub fn token_mut(&mut self, n: usize, h: usize, w: usize) -> &mut [T] {
        let i = ((n * self.h + h) * self.w + w) * self.c;
        &mut self.data[i..i + self.c]
    }

    pub fn frame(&self, n: usize) -> &[T] {
        let len = self.h * self.w * self.c;
        &self.data[n * len..(n + 1) * len]
    }

    /// Position of `frame_id` within this sequence.
    pub fn index_of(&self, frame_id: i64) -> Option<usize> {
        self.frame_ids.iter().position(|&f| f == frame_id)
    }

    /// Sub-sequence made of the given frame positions (must be increasing).
    pub fn select_frames(&self, positions: &[usize]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::param("no frames selected"));
        }
        let mut data = Vec::with_capacity(positions.len() * self.h * self.w * self.c);
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            if p >= self.n {
                return Err(Error::param(format!(
                    "frame position {p} out of range for {} frames",
                    self.n
                )));
            }
            data.extend_from_slice(self.frame(p));
            ids.push(self.frame_ids[p]);
        }
        let mut out = Self::new(data, [positions.len(), self.h, self.w, self.c], ids)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Sub-sequence made of the frames with the given source ids.
    pub fn select_ids(&self, ids: &[i64]) -> Result<Self> {
        let positions = ids
            .iter()
            .map(|&id| {
                self.index_of(id)
                    .ok_or_else(|| Error::param(format!("frame id {id} not present")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select_frames(&positions)
    }

    /// Appends the frames of `other` after this sequence's frames.
    pub fn append_frames(&self, other: &Self) -> Result<Self> {
        if other.h != self.h || other.w != self.w || other.c != self.c {
            return Err(Error::dim(format!(
                "cannot append [{}, {}, {}] frames to [{}, {}, {}]",
                other.h, other.w, other.c, self.h, self.w, self.c
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut ids = self.frame_ids.clone();
        ids.extend_from_slice(&other.frame_ids);
        let mut out = Self::new(data, [self.n + other.n, self.h, self.w, self.c], ids)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Spatial crop `[h0..h0+ch, w0..w0+cw]` applied identically to every frame.
    pub fn crop(&self, h0: usize, w0: usize, ch: usize, cw: usize) -> Result<Self> {
        if ch == 0 || cw == 0 || h0 + ch > self.h || w0 + cw > self.w {
            return Err(Error::param(format!(
                "crop {ch}x{cw} at ({h0}, {w0}) outside {}x{} grid",
                self.h, self.w
            )));
        }
        let mut data = Vec::with_capacity(self.n * ch * cw * self.c);
        for n in 0..self.n {
            for h in h0..h0 + ch {
                let start = ((n * self.h + h) * self.w + w0) * self.c;
                data.extend_from_slice(&self.data[start..start + cw * self.c]);
            }
        }
        let mut out = Self::new(data, [self.n, ch, cw, self.c], self.frame_ids.clone())?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Average-pools the grid by integer factors, e.g. to build low-resolution
    /// training features for the first phase of a resolution curriculum.
    pub fn downsample(&self, fh: usize, fw: usize) -> Result<Self> {
        if fh == 0 || fw == 0 || self.h % fh != 0 || self.w % fw != 0 {
            return Err(Error::dim(format!(
                "grid {}x{} not divisible by {fh}x{fw}",
                self.h, self.w
            )));
        }
        let (oh, ow) = (self.h / fh, self.w / fw);
        let scale = T::one() / T::from_usize(fh * fw).unwrap();
        let mut data = vec![T::zero(); self.n * oh * ow * self.c];
        for n in 0..self.n {
            for h in 0..self.h {
                for w in 0..self.w {
                    let dst = ((n * oh + h / fh) * ow + w / fw) * self.c;
                    for (o, &v) in data[dst..dst + self.c].iter_mut().zip(self.token(n, h, w)) {
                        *o += v * scale;
                    }
                }
            }
        }
        let mut out = Self::new(data, [self.n, oh, ow, self.c], self.frame_ids.clone())?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Converts the element type (e.g. f32 storage to f64 gradient checking).
    pub fn cast<U: Real>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            frame_ids: self.frame_ids.clone(),
            meta: self.meta.clone(),
        }
    }
}
