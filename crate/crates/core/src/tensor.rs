//! Dense rank-4 tensors.
//!
//! One carrier type serves images, feature maps, weights, and gradients.
//! Layout is fixed and documented: batch-major, then channel, then row, then
//! column, i.e. element `(b, c, i, j)` of a `(B, C, H, W)` tensor lives at
//! flat index `((b * C + c) * H + i) * W + j`. Vectors (fully connected
//! activations) are carried as `(batch, features, 1, 1)`.
//!
//! Values are `f64` throughout and finite by construction: constructors and
//! `set` reject NaN/Inf at the boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("data length {got} does not match shape volume {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("index ({b}, {c}, {i}, {j}) out of bounds for shape {shape:?}")]
    IndexOutOfBounds {
        shape: Shape4,
        b: usize,
        c: usize,
        i: usize,
        j: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Shape4, right: Shape4 },
    #[error("non-finite value rejected")]
    NonFinite,
}

/// Dimensions of a rank-4 tensor: (batch, channels, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    /// # Panics
    /// Panics if any dimension is zero.
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        assert!(
            batch >= 1 && channels >= 1 && height >= 1 && width >= 1,
            "all Shape4 dimensions must be >= 1, got ({batch}, {channels}, {height}, {width})"
        );
        Shape4 {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn volume(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Elements in one spatial plane (height * width).
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, b: usize, c: usize, i: usize, j: usize) -> bool {
        b < self.batch && c < self.channels && i < self.height && j < self.width
    }

    /// Flat offset of `(b, c, i, j)` under the documented layout.
    #[inline]
    pub fn offset(&self, b: usize, c: usize, i: usize, j: usize) -> usize {
        ((b * self.channels + c) * self.height + i) * self.width + j
    }
}

/// Dense rank-4 array of finite `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape4) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.volume()],
        }
    }

    /// Constant-filled tensor. Rejects non-finite fill values.
    pub fn filled(shape: Shape4, fill: f64) -> Result<Self, TensorError> {
        if !fill.is_finite() {
            return Err(TensorError::NonFinite);
        }
        Ok(Tensor {
            shape,
            data: vec![fill; shape.volume()],
        })
    }

    /// Tensor from a flat value list in the documented layout.
    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != shape.volume() {
            return Err(TensorError::LengthMismatch {
                expected: shape.volume(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn get(&self, b: usize, c: usize, i: usize, j: usize) -> Result<f64, TensorError> {
        if !self.shape.contains(b, c, i, j) {
            return Err(TensorError::IndexOutOfBounds {
                shape: self.shape,
                b,
                c,
                i,
                j,
            });
        }
        Ok(self.data[self.shape.offset(b, c, i, j)])
    }

    pub fn set(&mut self, b: usize, c: usize, i: usize, j: usize, v: f64) -> Result<(), TensorError> {
        if !self.shape.contains(b, c, i, j) {
            return Err(TensorError::IndexOutOfBounds {
                shape: self.shape,
                b,
                c,
                i,
                j,
            });
        }
        if !v.is_finite() {
            return Err(TensorError::NonFinite);
        }
        self.data[self.shape.offset(b, c, i, j)] = v;
        Ok(())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One spatial plane as a slice.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub(crate) fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    /// Elementwise `a * x + y`.
    pub fn axpy(a: f64, x: &Tensor, y: &Tensor) -> Result<Tensor, TensorError> {
        if x.shape != y.shape {
            return Err(TensorError::ShapeMismatch {
                left: x.shape,
                right: y.shape,
            });
        }
        let data = x
            .data
            .iter()
            .zip(&y.data)
            .map(|(&xv, &yv)| a * xv + yv)
            .collect();
        Ok(Tensor {
            shape: x.shape,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
