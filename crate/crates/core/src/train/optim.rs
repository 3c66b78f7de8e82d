use crate::model::{LayerGrads, Network};

/// `lr_min + ½(lr_max − lr_min)(1 + cos(πt/T))`; `t` is clamped to `[0, T]`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f32, lr_min: f32) -> f32 {
    if total == 0 {
        return lr_max;
    }
    let frac = t.min(total) as f64 / total as f64;
    let (hi, lo) = (lr_max as f64, lr_min as f64);
    (lo + 0.5 * (hi - lo) * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
}

/// Learning rate as a function of the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Cosine { lr_max: f32, lr_min: f32 },
    Constant(f32),
}

impl Schedule {
    pub fn lr(&self, step: usize, total: usize) -> f32 {
        match *self {
            Schedule::Cosine { lr_max, lr_min } => cosine_lr(step, total, lr_max, lr_min),
            Schedule::Constant(lr) => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam moment estimates for a list of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    groups: Vec<Moments>,
}

impl AdamState {
    pub fn new(group_sizes: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            groups: group_sizes
                .iter()
                .map(|&n| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    /// One group per weight, bias, γ and β vector, in layer order.
    pub fn for_network(net: &Network) -> Self {
        AdamState::new(&network_groups(net))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once before the updates of a step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of group `group`. Entries whose `keep` flag is
    /// false are forced to zero and their moments stay untouched.
    pub fn update(
        &mut self,
        group: usize,
        params: &mut [f32],
        grads: &[f32],
        lr: f32,
        keep: Option<&[bool]>,
    ) {
        assert!(self.step > 0, "begin_step must precede update");
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mo = &mut self.groups[group];
        assert_eq!(params.len(), mo.m.len(), "parameter group {group} changed size");
        assert_eq!(grads.len(), params.len(), "gradient size for group {group}");
        for i in 0..params.len() {
            if keep.is_some_and(|k| !k[i]) {
                params[i] = 0.0;
                continue;
            }
            let g = grads[i];
            mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * g;
            mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * g * g;
            let m_hat = mo.m[i] / c1;
            let v_hat = mo.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn network_groups(net: &Network) -> Vec<usize> {
    let mut sizes = Vec::new();
    for l in &net.layers {
        sizes.push(l.conv.weights.shape().numel());
        sizes.push(l.conv.out_ch);
        if let Some(bn) = &l.bn {
            sizes.push(bn.channels());
            sizes.push(bn.channels());
        }
    }
    sizes
}

/// One Adam step over every trainable parameter. `layer_scale[i]` multiplies
/// the learning rate of layer `i` (heads included); pruned weights stay 0.
pub fn adam_step(
    net: &mut Network,
    grads: &[LayerGrads],
    state: &mut AdamState,
    lr: f32,
    layer_scale: Option<&[f32]>,
) {
    state.begin_step();
    let mut group = 0;
    for (i, (layer, g)) in net.layers.iter_mut().zip(grads).enumerate() {
        let lr = lr * layer_scale.map_or(1.0, |s| s[i]);
        let keep = (!layer.mask.is_all_pass()).then(|| layer.mask.keep_flags());
        state.update(group, layer.conv.weights.data_mut(), &g.weights, lr, keep);
        state.update(group + 1, &mut layer.conv.bias, &g.bias, lr, None);
        group += 2;
        if let Some(bn) = layer.bn.as_mut() {
            let gamma = g.gamma.as_deref().expect("batch-norm layer has γ gradient");
            let beta = g.beta.as_deref().expect("batch-norm layer has β gradient");
            state.update(group, &mut bn.gamma, gamma, lr, None);
            state.update(group + 1, &mut bn.beta, beta, lr, None);
            group += 2;
        }
    }
}

/// Proximal step for `λ·Σ|w|`: every kept weight moves `lr·λ` toward zero
/// and stops there instead of crossing it. The step is decoupled from
/// Adam's per-parameter scaling, so weights the data barely pushes end up
/// exactly zero.
pub fn l1_shrink(net: &mut Network, lambda: f32, lr: f32, layer_scale: Option<&[f32]>) {
    if lambda == 0.0 {
        return;
    }
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let t = lr * lambda * layer_scale.map_or(1.0, |s| s[i]);
        for w in layer.conv.weights.data_mut() {
            *w = if w.abs() <= t { 0.0 } else { *w - t.copysign(*w) };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_robo, init_network, Mask};

    #[test]
    fn l1_shrink_stops_at_zero() {
        let mut net = Network::zeros(build_robo(1).unwrap());
        net.layers[0].conv.weights.data_mut()[..4].copy_from_slice(&[0.5, -0.5, 0.01, -0.01]);
        l1_shrink(&mut net, 2.0, 0.1, None);
        assert_eq!(&net.layers[0].conv.weights.data()[..4], &[0.3, -0.3, 0.0, 0.0]);
        let mut scale = vec![1.0; net.layers.len()];
        scale[0] = 0.0;
        l1_shrink(&mut net, 2.0, 0.1, Some(&scale));
        assert_eq!(&net.layers[0].conv.weights.data()[..2], &[0.3, -0.3]);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 5e-5), 1e-3);
        assert_eq!(cosine_lr(100, 100, 1e-3, 5e-5), 5e-5);
        assert!((cosine_lr(50, 100, 1e-3, 5e-5) - 5.25e-4).abs() < 1e-9);
        let mut prev = f32::INFINITY;
        for t in 0..=100 {
            let lr = cosine_lr(t, 100, 1e-3, 5e-5);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut s = AdamState::new(&[3]);
        let mut p = [1.0f32, -2.0, 0.5];
        s.begin_step();
        s.update(0, &mut p, &[0.0; 3], 1e-2, None);
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = AdamState::new(&[1]);
        let mut p = [0.0f32];
        for _ in 0..50 {
            s.begin_step();
            s.update(0, &mut p, &[3.0], 1e-2, None);
        }
        assert!(p[0] < -0.4);
    }

    #[test]
    fn quadratic_bowl_loss_strictly_decreases() {
        // f(x) = Σ c_i (x_i − o_i)², simulated in f64 alongside.
        let c = [1.0f32, 4.0, 0.5];
        let o = [0.3f32, -1.0, 2.0];
        let f = |x: &[f32]| -> f64 {
            x.iter().zip(c).zip(o).map(|((&x, c), o)| c as f64 * ((x - o) as f64).powi(2)).sum()
        };
        let mut s = AdamState::new(&[3]);
        let mut x = [0.0f32; 3];
        let mut prev = f(&x);
        for _ in 0..10 {
            let g: Vec<f32> = x.iter().zip(c).zip(o).map(|((&x, c), o)| 2.0 * c * (x - o)).collect();
            s.begin_step();
            s.update(0, &mut x, &g, 0.05, None);
            let now = f(&x);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn masked_weights_stay_zero() {
        let mut net = init_network(build_robo(1).unwrap(), 1);
        let n = net.layers[3].conv.weights.shape().numel();
        net.layers[3].mask = Mask::from_keep((0..n).map(|i| i % 3 != 0).collect());
        net.apply_masks();
        let mut state = AdamState::for_network(&net);
        let grads: Vec<LayerGrads> = net
            .layers
            .iter()
            .map(|l| {
                let mut g = LayerGrads::zeros_like(l);
                g.weights.iter_mut().for_each(|w| *w = 0.7);
                g
            })
            .collect();
        let before = net.layers[3].conv.weights.clone();
        for _ in 0..3 {
            adam_step(&mut net, &grads, &mut state, 1e-2, None);
        }
        let w = net.layers[3].conv.weights.data();
        for (i, &wi) in w.iter().enumerate().take(n) {
            if i % 3 == 0 {
                assert_eq!(wi.to_bits(), 0);
            } else {
                assert!(wi < before.data()[i]);
            }
        }
    }
}
