//! Array types and the on-disk containers for tensors, optical flow and masks.
//!
//! In memory everything is held at the scalar precision of the caller; on disk
//! tensors and flow are stored as little-endian IEEE-754 `f32`.

mod flo;
mod pgm;
mod sgt;

use std::io::Read;

use crate::{Error, Result, Scalar};

pub use flo::{read_flo, read_flo_file, write_flo, write_flo_file, FLO_MAGIC};
pub use pgm::{read_pgm_mask, read_pgm_mask_file, write_pgm_mask, write_pgm_mask_file};
pub use sgt::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, SGT_MAGIC};

/// Dense row-major array of rank 1, 2 or 3. Stacks are channel-major `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::input(format!("tensor rank {} not in 1..=3", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::input(format!("tensor dims {dims:?} contain a zero extent")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::input(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Result<Self> {
        let n = dims.iter().product();
        Tensor::new(dims, vec![value; n])
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Tensor::filled(dims, T::zero())
    }

    /// Rank-2 map built from `f(row, col)`.
    pub fn from_fn2(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Tensor::new(vec![height, width], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Spatial extent `(height, width)` of a rank-2 map or rank-3 stack.
    pub fn spatial(&self) -> Option<(usize, usize)> {
        match self.dims.as_slice() {
            [h, w] | [_, h, w] => Some((*h, *w)),
            _ => None,
        }
    }

    /// Number of channels: the leading extent of a stack, 1 for a map.
    pub fn channels(&self) -> usize {
        match self.dims.as_slice() {
            [c, _, _] => *c,
            _ => 1,
        }
    }

    /// One channel plane of a `[C, H, W]` stack (or the whole map for rank 2).
    pub fn channel(&self, c: usize) -> &[T] {
        let (h, w) = self.spatial().expect("channel() on a rank-1 tensor");
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn at2(&self, row: usize, col: usize) -> T {
        let w = self.dims[self.dims.len() - 1];
        self.data[row * w + col]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }

    /// Convert to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| U::from(x).unwrap_or_else(U::nan)).collect(),
        }
    }
}

/// Dense optical flow: per-pixel horizontal (`u`) and vertical (`v`) displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    width: usize,
    height: usize,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn new(width: usize, height: usize, u: Vec<T>, v: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input("flow field must have positive dimensions"));
        }
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::input(format!(
                "flow {width}x{height} needs {n} values per component, got u={} v={}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::input("flow field contains non-finite values"));
        }
        Ok(FlowField { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        FlowField::new(width, height, vec![T::zero(); n], vec![T::zero(); n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }
}

/// Binary per-pixel mask, foreground = `true`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input("mask must have positive dimensions"));
        }
        if bits.len() != width * height {
            return Err(Error::input(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Mask { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set_index(&mut self, idx: usize, value: bool) {
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// `(|self ∩ other|, |self ∪ other|)`; panics on shape mismatch.
    pub fn overlap(&self, other: &Mask) -> (usize, usize) {
        assert!(self.same_shape(other), "mask shape mismatch");
        self.bits.iter().zip(&other.bits).fold((0, 0), |(i, u), (&a, &b)| {
            (i + (a && b) as usize, u + (a || b) as usize)
        })
    }
}

/// `read_exact` that reports a short read as truncation of `field`.
pub(crate) fn read_field<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(field, "truncated"),
        _ => Error::Stream(e),
    })
}

/// Read exactly `nbytes` without trusting the header for an up-front allocation.
pub(crate) fn read_payload<R: Read>(r: &mut R, nbytes: u64, field: &'static str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(nbytes).read_to_end(&mut buf).map_err(Error::Stream)?;
    if (buf.len() as u64) < nbytes {
        return Err(Error::format(
            field,
            format!("truncated: expected {nbytes} bytes, got {}", buf.len()),
        ));
    }
    Ok(buf)
}
