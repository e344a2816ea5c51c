//! Rank-5 tensor container in N x C x L x H x W layout, plus the resampling
//! primitives shared by the rest of the crate.
//!
//! Layout convention: channels before time, so a temporal scan over one
//! (n, c) pair is a single stride loop. Data is contiguous row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::elem::Elem;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("invalid dimensions {0:?}: all dims must be >= 1 and their product must not overflow")]
    BadDims((usize, usize, usize, usize, usize)),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad RTEN1 file: {0}")]
    BadFormat(String),
}

/// Dimensions of a [`Tensor5`]: batch, channels, temporal length, rows, cols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims5 {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims5 {
    pub fn new(n: usize, c: usize, l: usize, h: usize, w: usize) -> Self {
        Dims5 { n, c, l, h, w }
    }

    pub fn count(&self) -> Option<usize> {
        [self.c, self.l, self.h, self.w]
            .iter()
            .try_fold(self.n, |acc, &d| acc.checked_mul(d))
    }

    fn as_tuple(&self) -> (usize, usize, usize, usize, usize) {
        (self.n, self.c, self.l, self.h, self.w)
    }
}

/// Dense rank-5 float array. Immutable once shared; all ops are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T: Elem> {
    dims: Dims5,
    data: Vec<T>,
}

impl<T: Elem> Tensor5<T> {
    pub fn new(dims: Dims5, fill: T) -> Result<Self, TensorError> {
        let count = dims.count().filter(|&c| c > 0);
        if dims.n == 0 || dims.c == 0 || dims.l == 0 || dims.h == 0 || dims.w == 0 {
            return Err(TensorError::BadDims(dims.as_tuple()));
        }
        let count = count.ok_or(TensorError::BadDims(dims.as_tuple()))?;
        Ok(Tensor5 { dims, data: vec![fill; count] })
    }

    pub fn zeros(dims: Dims5) -> Result<Self, TensorError> {
        Self::new(dims, T::ZERO)
    }

    pub fn from_vec(dims: Dims5, data: Vec<T>) -> Result<Self, TensorError> {
        let count = dims.count().ok_or(TensorError::BadDims(dims.as_tuple()))?;
        if dims.count().is_none() || count == 0 {
            return Err(TensorError::BadDims(dims.as_tuple()));
        }
        if data.len() != count {
            return Err(TensorError::ShapeMismatch(format!(
                "data length {} does not match dims {:?} (= {count} elements)",
                data.len(),
                dims.as_tuple()
            )));
        }
        Ok(Tensor5 { dims, data })
    }

    pub fn dims(&self) -> Dims5 {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, l: usize, i: usize, j: usize) -> usize {
        debug_assert!(
            n < self.dims.n && c < self.dims.c && l < self.dims.l && i < self.dims.h && j < self.dims.w,
            "index ({n},{c},{l},{i},{j}) out of bounds for dims {:?}",
            self.dims.as_tuple()
        );
        (((n * self.dims.c + c) * self.dims.l + l) * self.dims.h + i) * self.dims.w + j
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, l: usize, i: usize, j: usize) -> T {
        self.data[self.offset(n, c, l, i, j)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, l: usize, i: usize, j: usize) -> &mut T {
        let off = self.offset(n, c, l, i, j);
        &mut self.data[off]
    }

    /// Contiguous H*W slice for one (n, c, l).
    pub fn frame(&self, n: usize, c: usize, l: usize) -> &[T] {
        let start = self.offset(n, c, l, 0, 0);
        &self.data[start..start + self.dims.h * self.dims.w]
    }

    pub fn frame_mut(&mut self, n: usize, c: usize, l: usize) -> &mut [T] {
        let start = self.offset(n, c, l, 0, 0);
        let hw = self.dims.h * self.dims.w;
        &mut self.data[start..start + hw]
    }

    /// Reinterpret with new dims of equal element count.
    pub fn reshape(self, dims: Dims5) -> Result<Self, TensorError> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor5 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v.mul(s))
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.dims.as_tuple(),
                other.dims.as_tuple()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a.add(b)).collect();
        Ok(Tensor5 { dims: self.dims, data })
    }

    pub fn convert<U: Elem>(&self) -> Tensor5<U> {
        Tensor5 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Per-pixel binary mask for a batch of frames (values exactly 0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<u8>,
}

impl Mask2 {
    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        Mask2 { n, h, w, data: vec![0; n * h * w] }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self, TensorError> {
        if data.len() != n * h * w {
            return Err(TensorError::ShapeMismatch(format!(
                "mask data length {} != {n}x{h}x{w}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(TensorError::BadFormat("mask values must be 0 or 1".into()));
        }
        Ok(Mask2 { n, h, w, data })
    }

    #[inline]
    pub fn at(&self, n: usize, i: usize, j: usize) -> u8 {
        self.data[(n * self.h + i) * self.w + j]
    }

    pub fn set(&mut self, n: usize, i: usize, j: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[(n * self.h + i) * self.w + j] = v;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Fraction of pixels set to 1.
    pub fn fg_ratio(&self) -> f64 {
        let ones: usize = self.data.iter().map(|&v| v as usize).sum();
        ones as f64 / self.data.len() as f64
    }
}

pub fn tensor_create<T: Elem>(dims: Dims5, fill: T) -> Result<Tensor5<T>, TensorError> {
    Tensor5::new(dims, fill)
}

/// Align-corners-false bilinear resize of every (n, c, l) slice.
pub fn bilinear_resize<T: Elem>(x: &Tensor5<T>, new_h: usize, new_w: usize) -> Result<Tensor5<T>, TensorError> {
    let d = x.dims();
    if new_h == 0 || new_w == 0 {
        return Err(TensorError::BadDims((d.n, d.c, d.l, new_h, new_w)));
    }
    if new_h == d.h && new_w == d.w {
        return Ok(x.clone());
    }
    let mut out = Tensor5::zeros(Dims5::new(d.n, d.c, d.l, new_h, new_w))?;
    let scale_h = d.h as f64 / new_h as f64;
    let scale_w = d.w as f64 / new_w as f64;

    // Precompute source coordinates per output row/col.
    let map = |dst: usize, scale: f64, limit: usize| -> (usize, usize, f64) {
        let src = (dst as f64 + 0.5) * scale - 0.5;
        let src = src.clamp(0.0, (limit - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(limit - 1);
        (lo, hi, src - lo as f64)
    };
    let rows: Vec<_> = (0..new_h).map(|i| map(i, scale_h, d.h)).collect();
    let cols: Vec<_> = (0..new_w).map(|j| map(j, scale_w, d.w)).collect();

    for n in 0..d.n {
        for c in 0..d.c {
            for l in 0..d.l {
                let src = x.frame(n, c, l);
                let dst = out.frame_mut(n, c, l);
                for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                        let v00 = src[r0 * d.w + c0].to_f64();
                        let v01 = src[r0 * d.w + c1].to_f64();
                        let v10 = src[r1 * d.w + c0].to_f64();
                        let v11 = src[r1 * d.w + c1].to_f64();
                        let top = v00 + (v01 - v00) * fc;
                        let bot = v10 + (v11 - v10) * fc;
                        dst[i * new_w + j] = T::from_f64(top + (bot - top) * fr);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Concatenate along the channel axis; `a` occupies channels [0, a.c).
pub fn concat_channels<T: Elem>(a: &Tensor5<T>, b: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
    let (da, db) = (a.dims(), b.dims());
    if da.n != db.n || da.l != db.l || da.h != db.h || da.w != db.w {
        return Err(TensorError::ShapeMismatch(format!(
            "concat_channels: non-channel dims differ, {:?} vs {:?}",
            da.as_tuple(),
            db.as_tuple()
        )));
    }
    let mut out = Tensor5::zeros(Dims5::new(da.n, da.c + db.c, da.l, da.h, da.w))?;
    let chunk = da.l * da.h * da.w;
    for n in 0..da.n {
        for c in 0..da.c {
            let start = a.offset(n, c, 0, 0, 0);
            let dst = out.offset(n, c, 0, 0, 0);
            out.data_mut()[dst..dst + chunk].copy_from_slice(&a.data()[start..start + chunk]);
        }
        for c in 0..db.c {
            let start = b.offset(n, c, 0, 0, 0);
            let dst = out.offset(n, da.c + c, 0, 0, 0);
            out.data_mut()[dst..dst + chunk].copy_from_slice(&b.data()[start..start + chunk]);
        }
    }
    Ok(out)
}

/// Extract the channel range [c0, c1) as a new tensor.
pub fn slice_channels<T: Elem>(x: &Tensor5<T>, c0: usize, c1: usize) -> Result<Tensor5<T>, TensorError> {
    let d = x.dims();
    if c0 >= c1 || c1 > d.c {
        return Err(TensorError::ShapeMismatch(format!(
            "slice_channels: range {c0}..{c1} out of 0..{}",
            d.c
        )));
    }
    let mut out = Tensor5::zeros(Dims5::new(d.n, c1 - c0, d.l, d.h, d.w))?;
    let chunk = d.l * d.h * d.w;
    for n in 0..d.n {
        for c in c0..c1 {
            let src = x.offset(n, c, 0, 0, 0);
            let dst = out.offset(n, c - c0, 0, 0, 0);
            out.data_mut()[dst..dst + chunk].copy_from_slice(&x.data()[src..src + chunk]);
        }
    }
    Ok(out)
}

pub const RTEN_MAGIC: &[u8; 5] = b"RTEN1";

/// Serialize in the RTEN1 binary format: 5-byte magic, dtype code,
/// five u64 LE dims, then raw little-endian element data.
pub fn write_rten<T: Elem>(x: &Tensor5<T>) -> Vec<u8> {
    let d = x.dims();
    let mut out = Vec::with_capacity(5 + 1 + 40 + x.len() * T::BYTE_WIDTH);
    out.extend_from_slice(RTEN_MAGIC);
    out.push(T::DTYPE_CODE);
    for dim in [d.n, d.c, d.l, d.h, d.w] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for &v in x.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn read_rten<T: Elem>(bytes: &[u8]) -> Result<Tensor5<T>, TensorError> {
    if bytes.len() < 46 {
        return Err(TensorError::BadFormat("truncated header".into()));
    }
    if &bytes[..5] != RTEN_MAGIC {
        return Err(TensorError::BadFormat("bad magic".into()));
    }
    if bytes[5] != T::DTYPE_CODE {
        return Err(TensorError::BadFormat(format!(
            "dtype code {} does not match requested element type",
            bytes[5]
        )));
    }
    let mut dims = [0usize; 5];
    for (k, dim) in dims.iter_mut().enumerate() {
        let off = 6 + k * 8;
        *dim = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
    }
    let dims = Dims5::new(dims[0], dims[1], dims[2], dims[3], dims[4]);
    let count = dims.count().ok_or(TensorError::BadFormat("dim overflow".into()))?;
    let body = &bytes[46..];
    if body.len() != count * T::BYTE_WIDTH {
        return Err(TensorError::BadFormat(format!(
            "payload is {} bytes, expected {}",
            body.len(),
            count * T::BYTE_WIDTH
        )));
    }
    let data = body.chunks_exact(T::BYTE_WIDTH).map(T::read_le).collect();
    Tensor5::from_vec(dims, data)
}

pub fn save_rten<T: Elem>(x: &Tensor5<T>, path: &Path) -> Result<(), TensorError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&write_rten(x))?;
    Ok(())
}

pub fn load_rten<T: Elem>(path: &Path) -> Result<Tensor5<T>, TensorError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_rten(&bytes)
}
