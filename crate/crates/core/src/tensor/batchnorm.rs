use super::{ensure_dim, Tensor};
use crate::error::Result;

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub epsilon: f32,
}

impl BatchNormParams {
    /// Identity transform: γ=1, β=0, μ=0, σ²=1.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Saved forward state for [`batch_norm_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Train mode normalizes with batch statistics, folds them into the running
/// estimates, and returns a cache for the backward pass. Infer mode uses the
/// running estimates and returns no cache.
pub fn batch_norm(
    input: &Tensor,
    params: &mut BatchNormParams,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let s = input.shape();
    ensure_dim("batch_norm", "channels", params.channels(), s.c)?;
    let plane = s.plane();

    match mode {
        Mode::Infer => Ok((batch_norm_infer(input, params)?, None)),
        Mode::Train => {
            let mut out = Tensor::zeros(s);
            let count = (s.n * plane) as f64;
            let mut x_hat = Tensor::zeros(s);
            let mut inv_std = vec![0.0f32; s.c];
            #[allow(clippy::needless_range_loop)]
            for c in 0..s.c {
                let (mut sum, mut sq) = (0.0f64, 0.0f64);
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    for &x in &input.data()[off..off + plane] {
                        sum += x as f64;
                        sq += x as f64 * x as f64;
                    }
                }
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                let istd = 1.0 / (var + params.epsilon as f64).sqrt();
                inv_std[c] = istd as f32;
                let (mean_f, istd_f) = (mean as f32, istd as f32);
                let (g, b) = (params.gamma[c], params.beta[c]);
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    for i in off..off + plane {
                        let xh = (input.data()[i] - mean_f) * istd_f;
                        x_hat.data_mut()[i] = xh;
                        out.data_mut()[i] = g * xh + b;
                    }
                }
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                let m = params.momentum;
                params.running_mean[c] = (1.0 - m) * params.running_mean[c] + m * mean_f;
                params.running_var[c] = (1.0 - m) * params.running_var[c] + m * unbiased as f32;
            }
            Ok((out, Some(BatchNormCache { x_hat, inv_std })))
        }
    }
}

/// Inference-mode normalization with the running estimates.
pub fn batch_norm_infer(input: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let s = input.shape();
    ensure_dim("batch_norm", "channels", params.channels(), s.c)?;
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    for c in 0..s.c {
        let scale = params.gamma[c] / (params.running_var[c] + params.epsilon).sqrt();
        let shift = params.beta[c] - params.running_mean[c] * scale;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            let src = &input.data()[off..off + plane];
            for (o, &x) in out.data_mut()[off..off + plane].iter_mut().zip(src) {
                *o = x * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Gradients of a train-mode batch norm w.r.t. its input, γ and β.
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    params: &BatchNormParams,
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    let s = grad_out.shape();
    ensure_dim("batch_norm_backward", "channels", params.channels(), s.c)?;
    ensure_dim(
        "batch_norm_backward",
        "elements",
        cache.x_hat.shape().numel(),
        s.numel(),
    )?;
    let plane = s.plane();
    let count = (s.n * plane) as f32;
    let mut grad_in = Tensor::zeros(s);
    let mut d_gamma = vec![0.0f32; s.c];
    let mut d_beta = vec![0.0f32; s.c];
    let (g, xh) = (grad_out.data(), cache.x_hat.data());
    for c in 0..s.c {
        let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                sum_dy += g[i] as f64;
                sum_dy_xh += (g[i] * xh[i]) as f64;
            }
        }
        d_beta[c] = sum_dy as f32;
        d_gamma[c] = sum_dy_xh as f32;
        let k = params.gamma[c] * cache.inv_std[c] / count;
        let (sd, sdx) = (sum_dy as f32, sum_dy_xh as f32);
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                grad_in.data_mut()[i] = k * (count * g[i] - sd - xh[i] * sdx);
            }
        }
    }
    Ok(BatchNormGrads {
        input: grad_in,
        gamma: d_gamma,
        beta: d_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn standardized_input_passes_through() {
        // Per channel: mean 0, biased variance 1.
        let data = vec![1.0, -1.0, 1.0, -1.0, 2.0, 0.0, -2.0, 0.0];
        let input = Tensor::from_vec(Shape::new(1, 2, 2, 2), data).unwrap();
        let mut p = BatchNormParams::new(2);
        let (out, _) = batch_norm(&input, &mut p, Mode::Train).unwrap();
        let ch1_scale = 1.0 / (2.0f32 + BN_EPSILON).sqrt();
        let ch0_scale = 1.0 / (1.0f32 + BN_EPSILON).sqrt();
        for i in 0..4 {
            assert!((out.data()[i] - input.data()[i] * ch0_scale).abs() < 1e-6);
            assert!((out.data()[4 + i] - input.data()[4 + i] * ch1_scale).abs() < 1e-6);
        }
        assert!((out.data()[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let input = Tensor::from_vec(Shape::new(2, 1, 1, 3), vec![0.1, 5.0, -3.0, 2.0, 2.0, 9.0])
            .unwrap();
        let mut p = BatchNormParams::new(1);
        p.gamma[0] = 0.0;
        p.beta[0] = 0.75;
        for mode in [Mode::Train, Mode::Infer] {
            let (out, _) = batch_norm(&input, &mut p, mode).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.75));
        }
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let input = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        batch_norm(&input, &mut p, Mode::Train).unwrap();
        assert!((p.running_mean[0] - 0.25).abs() < 1e-6);
        // Unbiased variance of 1..4 is 5/3.
        assert!((p.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
        let (_, cache) = batch_norm(&input, &mut p.clone(), Mode::Infer).unwrap();
        assert!(cache.is_none());
    }
}
