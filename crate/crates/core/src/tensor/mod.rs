//! Dense NCHW tensors and the handful of layer kernels the detectors need:
//! im2col convolution, leaky ReLU and batch normalization, each with an
//! analytic backward pass.

mod activation;
mod batchnorm;
mod conv;
pub mod gemm;

pub use activation::{leaky_relu, leaky_relu_backward, LEAKY_SLOPE};
pub use batchnorm::{
    batch_norm, batch_norm_backward, batch_norm_infer, BatchNormCache, BatchNormGrads, BatchNormParams, Mode,
    BN_EPSILON, BN_MOMENTUM,
};
pub(crate) use conv::conv2d_backward_opts;
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_forward_with, fold_batch_norm, im2col, ConvGrads,
    ConvParams, WeightKernel,
};

use crate::error::{Error, Result};

/// Dimensions of a rank-4 tensor in (batch, channels, height, width) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Contiguous row-major f32 tensor, width fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape {
                op: "Tensor::from_vec",
                dim: "data length",
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.shape.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Stacks equally shaped single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| {
            Error::Validation("cannot stack an empty list of tensors".to_string())
        })?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        for t in items {
            if t.shape != s {
                return Err(Error::Shape {
                    op: "Tensor::stack",
                    dim: "item shape",
                    expected: s.numel(),
                    actual: t.shape.numel(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(s.n * items.len(), s.c, s.h, s.w),
            data,
        })
    }

    /// Copies batch item `i` out as a batch-of-one tensor.
    pub fn item(&self, i: usize) -> Tensor {
        let s = self.shape;
        Tensor {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.sample(i).to_vec(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub(crate) fn ensure_dim(
    op: &'static str,
    dim: &'static str,
    expected: usize,
    actual: usize,
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            dim,
            expected,
            actual,
        })
    }
}
