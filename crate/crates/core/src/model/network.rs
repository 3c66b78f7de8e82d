use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{Activation, HeadTap, LayerSpec, ModelSpec};
use crate::detect::AnchorSet;
use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm, batch_norm_backward, batch_norm_infer, conv2d_backward_opts, conv2d_forward,
    leaky_relu, leaky_relu_backward, BatchNormCache, BatchNormParams, ConvParams, Mode, Shape,
    Tensor, LEAKY_SLOPE,
};

/// Per-weight keep flags; `false` marks a pruned weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    keep: Vec<bool>,
}

impl Mask {
    pub fn all_pass(len: usize) -> Self {
        Mask {
            keep: vec![true; len],
        }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        Mask { keep }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keeps(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn keep_flags(&self) -> &[bool] {
        &self.keep
    }

    pub fn pruned(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn is_all_pass(&self) -> bool {
        self.keep.iter().all(|k| *k)
    }

    /// LSB-first bit packing, 1 = kept.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.keep.len().div_ceil(8)];
        for (i, _) in self.keep.iter().enumerate().filter(|(_, k)| **k) {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Self {
        Mask {
            keep: (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect(),
        }
    }
}

/// One convolution with its optional normalization, activation and mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub conv: ConvParams,
    pub bn: Option<BatchNormParams>,
    pub activation: Activation,
    pub mask: Mask,
}

impl ConvLayer {
    fn from_spec(l: &LayerSpec) -> Self {
        let conv = ConvParams::zeros(l.kernel, l.stride, l.in_ch, l.out_ch);
        let mask = Mask::all_pass(conv.weights.shape().numel());
        ConvLayer {
            conv,
            bn: l.has_bn.then(|| BatchNormParams::new(l.out_ch)),
            activation: l.activation,
            mask,
        }
    }

    /// Zeroes every pruned weight.
    pub fn apply_mask(&mut self) {
        for (w, &keep) in self.conv.weights.data_mut().iter_mut().zip(&self.mask.keep) {
            if !keep {
                *w = 0.0;
            }
        }
    }

    pub fn nonzero_fraction(&self) -> f64 {
        let w = self.conv.weights.data();
        if w.is_empty() {
            return 0.0;
        }
        w.iter().filter(|v| **v != 0.0).count() as f64 / w.len() as f64
    }
}

/// Instantiated detector: layer table, parameters, masks and anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    /// Backbone layers in order, then `head_lo`, then `head_hi`.
    pub layers: Vec<ConvLayer>,
    pub anchors: AnchorSet,
}

/// Everything a train-mode forward pass keeps for backpropagation.
#[derive(Debug)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[i]` the output of backbone layer `i`.
    acts: Vec<Tensor>,
    pre_act: Vec<Option<Tensor>>,
    bn: Vec<Option<BatchNormCache>>,
}

/// Parameter gradients, aligned with [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub gamma: Option<Vec<f32>>,
    pub beta: Option<Vec<f32>>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &ConvLayer) -> Self {
        LayerGrads {
            weights: vec![0.0; layer.conv.weights.shape().numel()],
            bias: vec![0.0; layer.conv.out_ch],
            gamma: layer.bn.as_ref().map(|b| vec![0.0; b.channels()]),
            beta: layer.bn.as_ref().map(|b| vec![0.0; b.channels()]),
        }
    }
}

impl Network {
    /// All-zero parameters, identity batch norms, all-pass masks.
    pub fn zeros(spec: ModelSpec) -> Self {
        let layers = spec.all_layers().iter().map(ConvLayer::from_spec).collect();
        Network {
            spec,
            layers,
            anchors: AnchorSet::default(),
        }
    }

    pub fn backbone_len(&self) -> usize {
        self.spec.backbone_len()
    }

    pub fn head_layer(&self, tap: HeadTap) -> &ConvLayer {
        let b = self.backbone_len();
        match tap {
            HeadTap::Lo => &self.layers[b],
            HeadTap::Hi => &self.layers[b + 1],
        }
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(
            batch,
            self.spec.input_channels,
            self.spec.input_height,
            self.spec.input_width,
        )
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        let e = self.input_shape(s.n);
        for (dim, exp, act) in [
            ("input channels", e.c, s.c),
            ("input height", e.h, s.h),
            ("input width", e.w, s.w),
        ] {
            crate::tensor::ensure_dim("forward", dim, exp, act)?;
        }
        if s.n == 0 {
            return Err(Error::Validation("forward needs a non-empty batch".into()));
        }
        Ok(())
    }

    pub fn apply_masks(&mut self) {
        for l in &mut self.layers {
            l.apply_mask();
        }
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.conv.weights.shape().numel()).sum()
    }

    /// Forward pass; train mode updates batch-norm running statistics.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        match mode {
            Mode::Infer => self.forward_infer(input),
            Mode::Train => self.forward_train(input).map(|(lo, hi, _)| (lo, hi)),
        }
    }

    /// `(raw_lo, raw_hi)` using running batch-norm statistics.
    pub fn forward_infer(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(input)?;
        let b = self.backbone_len();
        let (tap_lo, tap_hi) = self.tap_layers();
        let mut x = input.clone();
        let (mut lo_src, mut hi_src) = (None, None);
        for (i, layer) in self.layers[..b].iter().enumerate() {
            let mut y = conv2d_forward(&x, &layer.conv)?;
            if let Some(bn) = &layer.bn {
                y = batch_norm_infer(&y, bn)?;
            }
            if layer.activation == Activation::Leaky {
                y = leaky_relu(&y, LEAKY_SLOPE);
            }
            x = y;
            if i + 1 == tap_lo {
                lo_src = Some(x.clone());
            }
            if i + 1 == tap_hi {
                hi_src = Some(x.clone());
            }
        }
        let raw_lo = conv2d_forward(lo_src.as_ref().expect("tap exists"), &self.layers[b].conv)?;
        let raw_hi = conv2d_forward(hi_src.as_ref().expect("tap exists"), &self.layers[b + 1].conv)?;
        Ok((raw_lo, raw_hi))
    }

    fn tap_layers(&self) -> (usize, usize) {
        (
            self.spec.head(HeadTap::Lo).source_layer,
            self.spec.head(HeadTap::Hi).source_layer,
        )
    }

    /// Train-mode forward pass returning the cache needed by [`Network::backward`].
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, Tensor, ForwardCache)> {
        self.check_input(input)?;
        let b = self.backbone_len();
        let (tap_lo, tap_hi) = self.tap_layers();
        let mut acts = Vec::with_capacity(b + 1);
        let mut pre_act = Vec::with_capacity(b);
        let mut bn_caches = Vec::with_capacity(b);
        acts.push(input.clone());
        for layer in self.layers[..b].iter_mut() {
            let mut y = conv2d_forward(acts.last().expect("input pushed"), &layer.conv)?;
            let mut cache = None;
            if let Some(bn) = layer.bn.as_mut() {
                let (out, c) = batch_norm(&y, bn, Mode::Train)?;
                y = out;
                cache = c;
            }
            bn_caches.push(cache);
            if layer.activation == Activation::Leaky {
                let out = leaky_relu(&y, LEAKY_SLOPE);
                pre_act.push(Some(y));
                y = out;
            } else {
                pre_act.push(None);
            }
            acts.push(y);
        }
        let raw_lo = conv2d_forward(&acts[tap_lo], &self.layers[b].conv)?;
        let raw_hi = conv2d_forward(&acts[tap_hi], &self.layers[b + 1].conv)?;
        Ok((
            raw_lo,
            raw_hi,
            ForwardCache {
                acts,
                pre_act,
                bn: bn_caches,
            },
        ))
    }

    /// Parameter gradients given loss gradients on both raw head outputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_lo: &Tensor,
        grad_hi: &Tensor,
    ) -> Result<Vec<LayerGrads>> {
        let b = self.backbone_len();
        let (tap_lo, tap_hi) = self.tap_layers();
        let mut grads: Vec<LayerGrads> = self.layers.iter().map(LayerGrads::zeros_like).collect();
        // Gradient flowing into acts[i], filled lazily.
        let mut act_grads: Vec<Option<Tensor>> = vec![None; b + 1];

        for (slot, tap, grad) in [(b, tap_lo, grad_lo), (b + 1, tap_hi, grad_hi)] {
            let g = conv2d_backward_opts(&cache.acts[tap], &self.layers[slot].conv, grad, true)?;
            grads[slot].weights = g.weights.into_data();
            grads[slot].bias = g.bias;
            accumulate(&mut act_grads[tap], g.input.expect("requested"));
        }

        for i in (0..b).rev() {
            let layer = &self.layers[i];
            let Some(mut g) = act_grads[i + 1].take() else {
                continue;
            };
            if let Some(pre) = &cache.pre_act[i] {
                g = leaky_relu_backward(pre, &g, LEAKY_SLOPE);
            }
            if let (Some(bn), Some(bc)) = (&layer.bn, &cache.bn[i]) {
                let bg = batch_norm_backward(bc, bn, &g)?;
                grads[i].gamma = Some(bg.gamma);
                grads[i].beta = Some(bg.beta);
                g = bg.input;
            }
            let cg = conv2d_backward_opts(&cache.acts[i], &layer.conv, &g, i > 0)?;
            grads[i].weights = cg.weights.into_data();
            grads[i].bias = cg.bias;
            if let Some(gi) = cg.input {
                accumulate(&mut act_grads[i], gi);
            }
        }
        Ok(grads)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// He-normal weights (std `sqrt(2 / (k²·in_ch))`), zero biases, identity
/// batch norms, all-pass masks.
pub fn init_network(spec: ModelSpec, seed: u64) -> Network {
    let mut net = Network::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut net.layers {
        let fan_in = layer.conv.patch_len() as f32;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for w in layer.conv.weights.data_mut() {
            *w = normal.sample(&mut rng);
        }
    }
    net
}
