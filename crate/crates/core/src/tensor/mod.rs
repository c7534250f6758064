//! Dense rank-4 tensors and the hand-written forward/backward kernels used by
//! every candidate operation.
//!
//! All primitives are generic over [`Real`] so the gradient-check suites can
//! re-run them in `f64`; training uses `f32`. Work is split over the batch
//! dimension with rayon, and every cross-example reduction is summed in
//! example order, so results do not depend on the number of threads.

mod activation;
mod channels;
mod conv;
mod linear;
mod norm;
mod pool;
mod softmax;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{shape_err, Error, Result};

pub use activation::{prelu, prelu_backward, relu, relu_backward};
pub use channels::{
    add, add_assign, channel_shuffle, channel_unshuffle, concat_channels, shift_down_right,
    shift_down_right_backward, slice_channels,
};
pub use conv::{conv2d, conv2d_backward, ConvSpec};
pub use linear::{global_avg_pool, global_avg_pool_backward, linear, linear_backward};
pub use norm::{batch_norm, batch_norm_backward, BatchNormCache, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pool::{pool2d, pool2d_backward, PoolKind, PoolSpec};
pub use softmax::{softmax, softmax_backward};

/// Floating-point element type accepted by the primitives.
pub trait Real:
    Float + FromPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Train/eval switch shared by normalization and every op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Contiguous (N, C, H, W) array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(shape_err!(
                "{} elements do not fill shape {:?} ({} expected)",
                data.len(),
                shape,
                expected
            ));
        }
        Ok(Self { shape, data })
    }

    /// A `[values.len(), 1, 1, 1]` tensor; handy for kernels and vectors in tests.
    pub fn from_slice(shape: [usize; 4], values: &[T]) -> Result<Self> {
        Self::from_vec(shape, values.to_vec())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per example.
    pub fn example_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
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

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Inner product over all elements.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn expect_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err!(
                "{what}: expected {:?}, got {:?}",
                shape,
                self.shape
            ));
        }
        Ok(())
    }

    /// Converts element type, e.g. to run an `f32` fixture through `f64` primitives.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    /// Copies examples `indices` into a new batch.
    pub fn select_examples(&self, indices: &[usize]) -> Result<Self> {
        let len = self.example_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(shape_err!("example {i} out of range {}", self.shape[0]));
            }
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        Ok(Self {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        })
    }
}

/// Rejects outputs containing NaN or infinities.
pub(crate) fn check_finite<T: Real>(t: Tensor<T>, what: &str) -> Result<Tensor<T>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub(crate) fn check_finite_slice<T: Real>(values: &[T], what: &str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
