//! Dense rank-4 tensors in (batch, channel, height, width) layout and the
//! small set of kernels the rest of the crate is built on.
//!
//! Storage is row-major with width fastest. Values are kept in `f64`: the
//! gradient checks compare analytic derivatives against central differences
//! at a relative tolerance of 1e-4, which single precision cannot resolve.

mod activation;
mod conv;
mod mask;
mod pool;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activation::{
    normalize, normalize_backward, relu, relu_backward, sigmoid, sigmoid_grad, softmax_channels,
    softmax_jacobian_apply, Activation,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use mask::OneHotMask;
pub use pool::{pool_backward, window_max, window_min, Extremum, PoolTrace, WindowSize};
pub(crate) use pool::scan_window;

/// Dimensions of a [`Tensor4`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions in one channel plane.
    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }

    pub fn with_batch(self, batch: usize) -> Self {
        Shape { batch, ..self }
    }

    pub(crate) fn expect(&self, op: &'static str, actual: Shape) -> Result<()> {
        if *self == actual {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                expected: *self,
                actual,
            })
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense (B, C, H, W) array of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`, checking its length against `shape` and rejecting
    /// NaN/Inf entries.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid(format!("tensor shape {shape} has a zero dimension")));
        }
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at linear index {pos}",
                data[pos]
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(b, c, y, x)]
    }

    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.shape.index(b, c, y, x);
        self.data[i] = value;
    }

    /// The contiguous H×W plane of channel `c` in batch item `b`.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.shape.plane();
        let start = self.shape.index(b, c, 0, 0);
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let n = self.shape.plane();
        let start = self.shape.index(b, c, 0, 0);
        &mut self.data[start..start + n]
    }

    /// All channels of batch item `b` as one slice.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.shape.channels * self.shape.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.shape.channels * self.shape.plane();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor4,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor4> {
        self.shape.expect(op, other.shape)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor4 {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.shape.expect("add_assign", other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects batch items `indices` into a new tensor, in order.
    pub fn gather_batch(&self, indices: &[usize]) -> Result<Tensor4> {
        let per = self.shape.channels * self.shape.plane();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &b in indices {
            if b >= self.shape.batch {
                return Err(Error::invalid(format!(
                    "batch index {b} out of range for {}",
                    self.shape
                )));
            }
            data.extend_from_slice(self.item(b));
        }
        Tensor4::from_vec(self.shape.with_batch(indices.len()), data)
    }

    /// Stacks single-item tensors of identical (C, H, W) along the batch axis.
    pub fn stack(items: &[&Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let mut shape = first.shape;
        shape.batch = 0;
        let mut data = Vec::new();
        for t in items {
            if (t.shape.channels, t.shape.height, t.shape.width)
                != (shape.channels, shape.height, shape.width)
            {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    expected: shape.with_batch(t.shape.batch),
                    actual: t.shape,
                });
            }
            shape.batch += t.shape.batch;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_width_fastest() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.index(1, 2, 3, 4), s.len() - 1);
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        let s = Shape::new(1, 1, 2, 2);
        assert!(Tensor4::from_vec(s, vec![0.0; 3]).is_err());
        assert!(Tensor4::from_vec(s, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Tensor4::from_vec(s, vec![0.0, 0.0, f64::INFINITY, 0.0]).is_err());
        assert!(Tensor4::from_vec(Shape::new(0, 1, 2, 2), vec![]).is_err());
        assert!(Tensor4::from_vec(s, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn gather_and_stack_agree() {
        let s = Shape::new(3, 2, 2, 2);
        let t = Tensor4::from_fn(s, |b, c, y, x| (b * 100 + c * 10 + y * 2 + x) as f64);
        let picked = t.gather_batch(&[2, 0]).unwrap();
        let a = t.gather_batch(&[2]).unwrap();
        let b = t.gather_batch(&[0]).unwrap();
        assert_eq!(Tensor4::stack(&[&a, &b]).unwrap(), picked);
        assert_eq!(picked.get(0, 1, 1, 0), 212.0);
    }
}
