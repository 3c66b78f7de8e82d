use super::network::Network;
use super::spec::{Activation, HeadTap};
use crate::error::Result;
use crate::tensor::{conv2d_forward_with, fold_batch_norm, ConvParams, Tensor, WeightKernel};

/// Default density below which a layer switches to the compressed kernel.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone)]
struct CompiledLayer {
    conv: ConvParams,
    kernel: WeightKernel,
    leaky: bool,
}

/// Inference-only form of a [`Network`]: batch norms folded into the
/// convolutions, and sparse layers optionally stored as CSR.
#[derive(Debug, Clone)]
pub struct InferenceNet {
    layers: Vec<CompiledLayer>,
    backbone: usize,
    tap_lo: usize,
    tap_hi: usize,
}

impl InferenceNet {
    /// `sparse_below`: layers whose nonzero fraction is under this value use
    /// the CSR product; `None` keeps every layer dense.
    pub fn compile(net: &Network, sparse_below: Option<f64>) -> Result<Self> {
        let mut layers = Vec::with_capacity(net.layers.len());
        for layer in &net.layers {
            let conv = match &layer.bn {
                Some(bn) => fold_batch_norm(&layer.conv, bn)?,
                None => layer.conv.clone(),
            };
            let kernel = match sparse_below {
                Some(limit) if layer.nonzero_fraction() < limit => WeightKernel::sparse(&conv),
                _ => WeightKernel::Dense,
            };
            layers.push(CompiledLayer {
                conv,
                kernel,
                leaky: layer.activation == Activation::Leaky,
            });
        }
        Ok(InferenceNet {
            layers,
            backbone: net.backbone_len(),
            tap_lo: net.spec.head(HeadTap::Lo).source_layer,
            tap_hi: net.spec.head(HeadTap::Hi).source_layer,
        })
    }

    pub fn sparse_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kernel, WeightKernel::Sparse(_)))
            .count()
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut x = input.clone();
        let (mut lo, mut hi) = (None, None);
        for (i, layer) in self.layers[..self.backbone].iter().enumerate() {
            x = conv2d_forward_with(&x, &layer.conv, &layer.kernel)?;
            if layer.leaky {
                for v in x.data_mut() {
                    if *v < 0.0 {
                        *v *= crate::tensor::LEAKY_SLOPE;
                    }
                }
            }
            if i + 1 == self.tap_lo {
                lo = Some(x.clone());
            }
            if i + 1 == self.tap_hi {
                hi = Some(x.clone());
            }
        }
        let head = |idx: usize, src: Option<Tensor>| {
            let l = &self.layers[idx];
            conv2d_forward_with(&src.expect("tap exists"), &l.conv, &l.kernel)
        };
        Ok((head(self.backbone, lo)?, head(self.backbone + 1, hi)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_robo, init_network};
    use crate::tensor::{BatchNormParams, Mode};

    #[test]
    fn compiled_matches_reference_forward() {
        let mut net = init_network(build_robo(1).unwrap(), 12);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            if let Some(bn) = layer.bn.as_mut() {
                let c = bn.channels();
                *bn = BatchNormParams {
                    gamma: (0..c).map(|j| 0.5 + (j % 5) as f32 * 0.2).collect(),
                    beta: (0..c).map(|j| (j % 3) as f32 * 0.1 - 0.1).collect(),
                    running_mean: (0..c).map(|j| (i + j) as f32 % 0.7 - 0.3).collect(),
                    running_var: (0..c).map(|j| 0.5 + (j % 4) as f32 * 0.5).collect(),
                    ..BatchNormParams::new(c)
                };
            }
            // Sparsify every other layer so both kernels are exercised.
            if i % 2 == 0 {
                let keep = (0..layer.mask.len()).map(|k| k % 5 == 0).collect();
                layer.mask = crate::model::Mask::from_keep(keep);
                layer.apply_mask();
            }
        }
        let input = Tensor::from_vec(
            net.input_shape(1),
            (0..3 * 192 * 256).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect(),
        )
        .unwrap();
        let (lo, hi) = net.forward(&input, Mode::Infer).unwrap();
        let dense = InferenceNet::compile(&net, None).unwrap();
        let sparse = InferenceNet::compile(&net, Some(SPARSE_DENSITY_THRESHOLD)).unwrap();
        assert_eq!(dense.sparse_layers(), 0);
        assert!(sparse.sparse_layers() >= 8);
        for compiled in [dense, sparse] {
            let (clo, chi) = compiled.forward(&input).unwrap();
            for (a, b) in lo.data().iter().chain(hi.data()).zip(clo.data().iter().chain(chi.data())) {
                assert!((a - b).abs() < 1e-3 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }
}
