use std::borrow::Cow;

use super::batchnorm::BatchNormParams;
use super::gemm::{gemm_nn, gemm_nt, gemm_tn, CsrMatrix};
use super::{ensure_dim, Shape, Tensor};
use crate::error::{Error, Result};

/// A same-padded 2-D convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: usize,
    pub stride: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Shape `(out_ch, in_ch, kernel, kernel)`.
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn zeros(kernel: usize, stride: usize, in_ch: usize, out_ch: usize) -> Self {
        ConvParams {
            kernel,
            stride,
            in_ch,
            out_ch,
            weights: Tensor::zeros(Shape::new(out_ch, in_ch, kernel, kernel)),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Columns of the lowered weight matrix (`in_ch · k²`).
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(
            input.n,
            self.out_ch,
            input.h.div_ceil(self.stride),
            input.w.div_ceil(self.stride),
        )
    }

    fn check_input(&self, op: &'static str, input: Shape) -> Result<()> {
        ensure_dim(op, "input channels", self.in_ch, input.c)?;
        for (dim, size) in [("input height", input.h), ("input width", input.w)] {
            if size == 0 || size % self.stride != 0 {
                return Err(Error::Shape {
                    op,
                    dim,
                    expected: size.div_ceil(self.stride).max(1) * self.stride,
                    actual: size,
                });
            }
        }
        Ok(())
    }
}

/// How the weight matrix is applied inside the convolution's matrix product.
#[derive(Debug, Clone)]
pub enum WeightKernel {
    Dense,
    /// Only nonzero weights are visited.
    Sparse(CsrMatrix),
}

impl WeightKernel {
    pub fn sparse(params: &ConvParams) -> Self {
        WeightKernel::Sparse(CsrMatrix::from_dense(
            params.weights.data(),
            params.out_ch,
            params.patch_len(),
        ))
    }
}

/// Lowers one `(c, h, w)` sample to a `(c·k², h_out·w_out)` patch matrix.
pub fn im2col(
    sample: &[f32],
    (c, h, w): (usize, usize, usize),
    kernel: usize,
    stride: usize,
) -> Cow<'_, [f32]> {
    if kernel == 1 && stride == 1 {
        return Cow::Borrowed(sample);
    }
    let pad = kernel / 2;
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut cols = vec![0.0f32; c * kernel * kernel * ho * wo];
    for ch in 0..c {
        let plane = &sample[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        // Shifted copy; the first/last column may fall in the padding.
                        let shift = kx as isize - pad as isize;
                        let lo = (-shift).max(0) as usize;
                        let hi = (w as isize - shift).min(wo as isize) as usize;
                        let from = (lo as isize + shift) as usize;
                        out[lo..hi].copy_from_slice(&src[from..from + (hi - lo)]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Cow::Owned(cols)
}

/// Scatter-adds a patch-matrix gradient back onto a `(c, h, w)` sample.
fn col2im(
    cols: &[f32],
    (c, h, w): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    out: &mut [f32],
) {
    let pad = kernel / 2;
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    conv2d_forward_with(input, params, &WeightKernel::Dense)
}

/// Convolution with an explicit weight representation. With
/// [`WeightKernel::Sparse`] the CSR matrix must have been built from
/// `params.weights`.
pub fn conv2d_forward_with(
    input: &Tensor,
    params: &ConvParams,
    kernel: &WeightKernel,
) -> Result<Tensor> {
    params.check_input("conv2d_forward", input.shape())?;
    let s = input.shape();
    let out_shape = params.output_shape(s);
    let spatial = out_shape.plane();
    let mut out = Tensor::zeros(out_shape);
    for i in 0..s.n {
        let cols = im2col(input.sample(i), (s.c, s.h, s.w), params.kernel, params.stride);
        let dst = out.sample_mut(i);
        for (o, &b) in params.bias.iter().enumerate() {
            dst[o * spatial..(o + 1) * spatial].fill(b);
        }
        match kernel {
            WeightKernel::Dense => gemm_nn(
                params.out_ch,
                spatial,
                params.patch_len(),
                params.weights.data(),
                &cols,
                dst,
            ),
            WeightKernel::Sparse(csr) => csr.matmul(spatial, &cols, dst),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    /// `None` when the caller did not ask for it (first layer).
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

/// Gradients of `Σ grad_out ⊙ conv2d_forward(input, params)`.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    conv2d_backward_opts(input, params, grad_out, true)
}

pub(crate) fn conv2d_backward_opts(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    params.check_input("conv2d_backward", input.shape())?;
    let s = input.shape();
    let expected = params.output_shape(s);
    if grad_out.shape() != expected {
        let g = grad_out.shape();
        for (dim, e, a) in [
            ("grad_out batch", expected.n, g.n),
            ("grad_out channels", expected.c, g.c),
            ("grad_out height", expected.h, g.h),
            ("grad_out width", expected.w, g.w),
        ] {
            ensure_dim("conv2d_backward", dim, e, a)?;
        }
    }
    let spatial = expected.plane();
    let patch = params.patch_len();
    let mut grad_w = Tensor::zeros(params.weights.shape());
    let mut grad_b = vec![0.0f32; params.out_ch];
    let mut grad_in = want_input.then(|| Tensor::zeros(s));
    let mut grad_cols = vec![0.0f32; patch * spatial];

    for i in 0..s.n {
        let g = grad_out.sample(i);
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += g[o * spatial..(o + 1) * spatial].iter().sum::<f32>();
        }
        let cols = im2col(input.sample(i), (s.c, s.h, s.w), params.kernel, params.stride);
        gemm_nt(params.out_ch, patch, spatial, g, &cols, grad_w.data_mut());

        if let Some(gi) = grad_in.as_mut() {
            grad_cols.fill(0.0);
            gemm_tn(patch, spatial, params.out_ch, params.weights.data(), g, &mut grad_cols);
            let dst = gi.sample_mut(i);
            if params.kernel == 1 && params.stride == 1 {
                for (d, v) in dst.iter_mut().zip(&grad_cols) {
                    *d += v;
                }
            } else {
                col2im(&grad_cols, (s.c, s.h, s.w), params.kernel, params.stride, dst);
            }
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}

/// Folds an inference-mode batch norm into the preceding convolution.
pub fn fold_batch_norm(conv: &ConvParams, bn: &BatchNormParams) -> Result<ConvParams> {
    ensure_dim("fold_batch_norm", "channels", conv.out_ch, bn.channels())?;
    let mut folded = conv.clone();
    let patch = conv.patch_len();
    for o in 0..conv.out_ch {
        let scale = bn.gamma[o] / (bn.running_var[o] + bn.epsilon).sqrt();
        for w in &mut folded.weights.data_mut()[o * patch..(o + 1) * patch] {
            *w *= scale;
        }
        folded.bias[o] = (conv.bias[o] - bn.running_mean[o]) * scale + bn.beta[o];
    }
    Ok(folded)
}
