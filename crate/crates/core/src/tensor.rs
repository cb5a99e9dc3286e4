//! Dense row-major `f64` arrays.
//!
//! Feature maps and images are stored channel-major as `[c, h, w]`; convolution
//! kernels are `[out, in / groups, k, k]`. Layout conversion to and from the
//! interleaved `[h, w, c]` pixel order happens only at the I/O boundary.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// An image or feature map: a rank-3 tensor `[c, h, w]`.
pub type Image = Tensor;

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1, 1, 1], data: vec![value] }
    }

    /// Rank-3 constructor from a generator over `(channel, row, column)`.
    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Self { shape: vec![c, h, w], data }
    }

    /// Builds a `[c, h, w]` tensor from interleaved `[h, w, c]` pixel data.
    pub fn from_hwc(h: usize, w: usize, c: usize, hwc: &[f64]) -> Result<Self> {
        if hwc.len() != h * w * c {
            return Err(Error::Shape(format!(
                "interleaved buffer of {} values does not match {h}x{w}x{c}",
                hwc.len()
            )));
        }
        Ok(Self::from_fn(c, h, w, |ci, y, x| hwc[(y * w + x) * c + ci]))
    }

    pub fn to_hwc(&self) -> Vec<f64> {
        let (c, h, w) = self.chw();
        let mut out = vec![0.0; c * h * w];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(y * w + x) * c + ci] = self.data[(ci * h + y) * w + x];
                }
            }
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(c, h, w)` of a rank-3 tensor.
    ///
    /// Panics on any other rank; every feature-map code path constructs rank-3
    /// tensors so a mismatch here is a programming error.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a [c, h, w] tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn channels(&self) -> usize {
        self.chw().0
    }

    pub fn height(&self) -> usize {
        self.chw().1
    }

    pub fn width(&self) -> usize {
        self.chw().2
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.chw();
        self.data[(c * h + y) * w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (_, h, w) = self.chw();
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let (_, h, w) = self.chw();
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_inplace(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Channel range `[c0, c1)` of a rank-3 tensor.
    pub fn channel_slice(&self, c0: usize, c1: usize) -> Self {
        let (_, h, w) = self.chw();
        Self { shape: vec![c1 - c0, h, w], data: self.data[c0 * h * w..c1 * h * w].to_vec() }
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let (_, h, w) = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?
            .chw();
        let mut c = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pc, ph, pw) = p.chw();
            if (ph, pw) != (h, w) {
                return Err(Error::Shape(format!(
                    "concat spatial mismatch: {h}x{w} vs {ph}x{pw}"
                )));
            }
            c += pc;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: vec![c, h, w], data })
    }

    pub fn flip_horizontal(&self) -> Self {
        let (c, h, w) = self.chw();
        Self::from_fn(c, h, w, |ci, y, x| self.at(ci, y, w - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        let (c, h, w) = self.chw();
        Self::from_fn(c, h, w, |ci, y, x| self.at(ci, h - 1 - y, x))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let (c, sh, sw) = self.chw();
        if y0 + h > sh || x0 + w > sw {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {sh}x{sw}"
            )));
        }
        Ok(Self::from_fn(c, h, w, |ci, y, x| self.at(ci, y0 + y, x0 + x)))
    }
}
