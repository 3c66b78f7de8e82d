use crate::data::Annotation;
use crate::detect::{encode, sigmoid};
use crate::error::{Error, Result};
use crate::model::{HeadTap, Network, HEAD_CHANNELS, VALUES_PER_CLASS};
use crate::tensor::{Shape, Tensor};

/// Weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub coord: f32,
    pub obj: f32,
    pub noobj: f32,
    /// Applied by the trainer through [`l1_shrink`](crate::train::l1_shrink).
    pub l1: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            coord: 5.0,
            obj: 1.0,
            noobj: 0.5,
            l1: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_coord", self.coord),
            ("lambda_obj", self.obj),
            ("lambda_noobj", self.noobj),
            ("lambda_l1", self.l1),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Batch loss and its gradients with respect to both raw head outputs.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean per-image detection loss plus the L1 term.
    pub loss: f64,
    pub l1: f64,
    pub grad_lo: Tensor,
    pub grad_hi: Tensor,
    /// Targets dropped because a larger box of the same class owned their cell.
    pub collisions: usize,
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Sum of `|w|` over every conv weight of the network.
pub fn l1_norm(net: &Network) -> f64 {
    net.layers
        .iter()
        .flat_map(|l| l.conv.weights.data())
        .map(|w| w.abs() as f64)
        .sum()
}

struct Assigned {
    tap: HeadTap,
    slot: usize,
    row: usize,
    col: usize,
    area: f32,
    target: [f32; 4],
}

/// Responsible (head, slot, cell) for every target of one image; on a
/// same-class same-cell collision the larger box wins.
fn assign(net: &Network, targets: &[Annotation], collisions: &mut usize) -> Result<Vec<Assigned>> {
    let mut out: Vec<Assigned> = Vec::with_capacity(targets.len());
    for t in targets {
        let (tap, slot) = HeadTap::owning(t.class);
        let grid = net.spec.head_grid(tap);
        let e = encode(t.class, &t.bbox, &net.anchors, grid)?;
        let cand = Assigned {
            tap,
            slot,
            row: e.row,
            col: e.col,
            area: t.bbox.area(),
            target: [e.offset.0, e.offset.1, e.log_size.0, e.log_size.1],
        };
        match out
            .iter_mut()
            .find(|a| a.tap == tap && a.slot == slot && a.row == e.row && a.col == e.col)
        {
            Some(existing) => {
                *collisions += 1;
                log::debug!(
                    "two {} targets share cell ({}, {}); keeping the larger",
                    t.class,
                    e.row,
                    e.col
                );
                if cand.area > existing.area {
                    *existing = cand;
                }
            }
            None => out.push(cand),
        }
    }
    Ok(out)
}

/// Adds one image's loss for one head to `grad` (already scaled by `scale`)
/// and returns the unscaled loss.
fn head_loss(
    raw: &[f32],
    grad: &mut [f32],
    plane: usize,
    cols: usize,
    responsible: &[&Assigned],
    lw: &LossWeights,
    scale: f32,
) -> f64 {
    let mut loss = 0.0f64;
    let slots = HEAD_CHANNELS / VALUES_PER_CLASS;
    for slot in 0..slots {
        let base = slot * VALUES_PER_CLASS * plane;
        let obj = base + 4 * plane;
        for cell in 0..plane {
            let to = raw[obj + cell];
            // Responsible slots are corrected below.
            loss += (lw.noobj * softplus(to)) as f64;
            grad[obj + cell] += scale * lw.noobj * sigmoid(to);
        }
    }
    for a in responsible {
        let base = a.slot * VALUES_PER_CLASS * plane;
        let cell = a.row * cols + a.col;
        let at = |k: usize| base + k * plane + cell;
        let to = raw[at(4)];
        loss -= (lw.noobj * softplus(to)) as f64;
        grad[at(4)] -= scale * lw.noobj * sigmoid(to);
        loss += (lw.obj * softplus(-to)) as f64;
        grad[at(4)] += scale * lw.obj * (sigmoid(to) - 1.0);
        for k in 0..2 {
            let s = sigmoid(raw[at(k)]);
            let d = s - a.target[k];
            loss += (lw.coord * d * d) as f64;
            grad[at(k)] += scale * lw.coord * 2.0 * d * s * (1.0 - s);
        }
        for k in 2..4 {
            let d = raw[at(k)] - a.target[k];
            loss += (lw.coord * d * d) as f64;
            grad[at(k)] += scale * lw.coord * 2.0 * d;
        }
    }
    loss
}

/// Detection loss averaged over the batch, plus `lw.l1 · Σ|w|`.
///
/// `targets[i]` holds the annotations of batch item `i`. The L1 term is
/// not differentiated here; the trainer applies it as a proximal step after
/// each Adam update (see [`l1_shrink`](crate::train::l1_shrink)).
pub fn detection_loss(
    raw_lo: &Tensor,
    raw_hi: &Tensor,
    targets: &[Vec<Annotation>],
    net: &Network,
    lw: &LossWeights,
) -> Result<LossOutput> {
    let n = raw_lo.shape().n;
    for (raw, tap) in [(raw_lo, HeadTap::Lo), (raw_hi, HeadTap::Hi)] {
        let (gh, gw) = net.spec.head_grid(tap);
        let expected = Shape::new(targets.len(), HEAD_CHANNELS, gh, gw);
        let s = raw.shape();
        for (dim, e, a) in [
            ("batch", expected.n, s.n),
            ("channels", expected.c, s.c),
            ("grid rows", expected.h, s.h),
            ("grid cols", expected.w, s.w),
        ] {
            crate::tensor::ensure_dim("detection_loss", dim, e, a)?;
        }
    }
    let mut grad_lo = Tensor::zeros(raw_lo.shape());
    let mut grad_hi = Tensor::zeros(raw_hi.shape());
    let scale = 1.0 / n as f32;
    let mut collisions = 0;
    let mut total = 0.0f64;
    for (i, t) in targets.iter().enumerate() {
        let assigned = assign(net, t, &mut collisions)?;
        for (raw, grad, tap) in [
            (raw_lo, &mut grad_lo, HeadTap::Lo),
            (raw_hi, &mut grad_hi, HeadTap::Hi),
        ] {
            let (_, cols) = net.spec.head_grid(tap);
            let plane = raw.shape().plane();
            let resp: Vec<&Assigned> = assigned.iter().filter(|a| a.tap == tap).collect();
            total += head_loss(raw.sample(i), grad.sample_mut(i), plane, cols, &resp, lw, scale);
        }
    }
    let l1 = if lw.l1 > 0.0 { lw.l1 as f64 * l1_norm(net) } else { 0.0 };
    Ok(LossOutput {
        loss: total / n as f64 + l1,
        l1,
        grad_lo,
        grad_hi,
        collisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::Class;
    use crate::detect::{AnchorSet, BBox};
    use crate::model::{build_robo, Network};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net() -> Network {
        let mut n = Network::zeros(build_robo(1).unwrap());
        n.anchors = AnchorSet([(0.05, 0.05), (0.08, 0.08), (0.04, 0.3), (0.12, 0.22)]);
        n
    }

    fn raws(net: &Network, batch: usize, fill: f32) -> (Tensor, Tensor) {
        let (a, b) = net.spec.head_grid(HeadTap::Lo);
        let (c, d) = net.spec.head_grid(HeadTap::Hi);
        (
            Tensor::full(Shape::new(batch, 10, a, b), fill),
            Tensor::full(Shape::new(batch, 10, c, d), fill),
        )
    }

    fn ann(class: Class, cx: f32, cy: f32, w: f32, h: f32) -> Annotation {
        Annotation {
            class,
            bbox: BBox::new(cx, cy, w, h),
        }
    }

    #[test]
    fn no_targets_and_silent_net_is_almost_free() {
        let net = net();
        let (lo, hi) = raws(&net, 2, -20.0);
        let out = detection_loss(&lo, &hi, &[vec![], vec![]], &net, &LossWeights::default()).unwrap();
        assert!(out.loss < 1e-5, "{}", out.loss);
        let lw = LossWeights {
            l1: 0.5,
            ..LossWeights::default()
        };
        let mut n2 = net.clone();
        n2.layers[0].conv.weights.data_mut()[0] = -2.0;
        let out = detection_loss(&lo, &hi, &[vec![], vec![]], &n2, &lw).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-5 && (out.l1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_has_tiny_coord_and_obj_terms() {
        let net = net();
        let target = ann(Class::Robot, 0.4, 0.6, 0.15, 0.2);
        let (mut lo, hi) = raws(&net, 1, -30.0);
        let grid = net.spec.head_grid(HeadTap::Lo);
        let e = encode(target.class, &target.bbox, &net.anchors, grid).unwrap();
        let (_, slot) = HeadTap::owning(Class::Robot);
        let logit = |p: f32| (p / (1.0 - p)).ln();
        let vals = [logit(e.offset.0), logit(e.offset.1), e.log_size.0, e.log_size.1, 30.0];
        let plane = grid.0 * grid.1;
        for (k, v) in vals.into_iter().enumerate() {
            lo.data_mut()[(slot * 5 + k) * plane + e.row * grid.1 + e.col] = v;
        }
        let lw = LossWeights {
            noobj: 0.0,
            ..LossWeights::default()
        };
        let out = detection_loss(&lo, &hi, &[vec![target]], &net, &lw).unwrap();
        assert!(out.loss < 1e-4, "{}", out.loss);
    }

    #[test]
    fn collision_keeps_larger_box() {
        let net = net();
        let small = ann(Class::Robot, 0.10, 0.10, 0.05, 0.05);
        let big = ann(Class::Robot, 0.12, 0.12, 0.10, 0.20);
        let (lo, hi) = raws(&net, 1, 0.0);
        let both = detection_loss(&lo, &hi, &[vec![small, big]], &net, &LossWeights::default()).unwrap();
        let only_big = detection_loss(&lo, &hi, &[vec![big]], &net, &LossWeights::default()).unwrap();
        assert_eq!(both.collisions, 1);
        assert_eq!(both.loss, only_big.loss);
        assert_eq!(both.grad_lo, only_big.grad_lo);
    }

    /// Independent f64 re-statement of the loss for finite differences.
    fn oracle_loss(lo: &[f64], hi: &[f64], net: &Network, targets: &[Vec<Annotation>], lw: &LossWeights) -> f64 {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let bce = |p: f64, y: f64| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let n = targets.len();
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            for (raw, tap) in [(lo, HeadTap::Lo), (hi, HeadTap::Hi)] {
                let (gh, gw) = net.spec.head_grid(tap);
                let plane = gh * gw;
                let v = |slot: usize, k: usize, r: usize, c: usize| raw[i * 10 * plane + (slot * 5 + k) * plane + r * gw + c];
                for slot in 0..2 {
                    let class = tap.classes()[slot];
                    for r in 0..gh {
                        for c in 0..gw {
                            let owner = t
                                .iter()
                                .filter(|a| {
                                    a.class == class
                                        && ((a.bbox.cy as f64 * gh as f64).floor() as usize).min(gh - 1) == r
                                        && ((a.bbox.cx as f64 * gw as f64).floor() as usize).min(gw - 1) == c
                                })
                                .max_by(|a, b| a.bbox.area().total_cmp(&b.bbox.area()));
                            let p = sig(v(slot, 4, r, c));
                            match owner {
                                None => total += lw.noobj as f64 * bce(p, 0.0),
                                Some(a) => {
                                    let (aw, ah) = net.anchors.get(class);
                                    let tx = a.bbox.cx as f64 * gw as f64 - c as f64;
                                    let ty = a.bbox.cy as f64 * gh as f64 - r as f64;
                                    let tw = (a.bbox.w as f64 / aw as f64).ln();
                                    let th = (a.bbox.h as f64 / ah as f64).ln();
                                    total += lw.obj as f64 * bce(p, 1.0);
                                    total += lw.coord as f64
                                        * ((sig(v(slot, 0, r, c)) - tx).powi(2)
                                            + (sig(v(slot, 1, r, c)) - ty).powi(2)
                                            + (v(slot, 2, r, c) - tw).powi(2)
                                            + (v(slot, 3, r, c) - th).powi(2));
                                }
                            }
                        }
                    }
                }
            }
        }
        total / n as f64
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = net();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lw = LossWeights::default();
        for _ in 0..10 {
            let (mut lo, mut hi) = raws(&net, 2, 0.0);
            for v in lo.data_mut().iter_mut().chain(hi.data_mut()) {
                *v = rng.random_range(-2.0..2.0);
            }
            let targets: Vec<Vec<Annotation>> = (0..2)
                .map(|_| {
                    (0..rng.random_range(0..5))
                        .map(|_| {
                            ann(
                                Class::ALL[rng.random_range(0..4)],
                                rng.random_range(0.05..0.95),
                                rng.random_range(0.05..0.95),
                                rng.random_range(0.02..0.4),
                                rng.random_range(0.02..0.4),
                            )
                        })
                        .collect()
                })
                .collect();
            let out = detection_loss(&lo, &hi, &targets, &net, &lw).unwrap();
            let lo64: Vec<f64> = lo.data().iter().map(|&x| x as f64).collect();
            let hi64: Vec<f64> = hi.data().iter().map(|&x| x as f64).collect();
            assert!((oracle_loss(&lo64, &hi64, &net, &targets, &lw) - out.loss).abs() < 1e-4);
            let delta = 1e-3;
            for (which, analytic) in [(0, &out.grad_lo), (1, &out.grad_hi)] {
                for idx in 0..analytic.data().len() {
                    let (mut plus, mut minus) = (lo64.clone(), lo64.clone());
                    let (mut plus_h, mut minus_h) = (hi64.clone(), hi64.clone());
                    if which == 0 {
                        plus[idx] += delta;
                        minus[idx] -= delta;
                    } else {
                        plus_h[idx] += delta;
                        minus_h[idx] -= delta;
                    }
                    let fd = (oracle_loss(&plus, &plus_h, &net, &targets, &lw)
                        - oracle_loss(&minus, &minus_h, &net, &targets, &lw))
                        / (2.0 * delta);
                    let a = analytic.data()[idx] as f64;
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                    assert!(rel < 1e-4, "head {which} idx {idx}: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_batch() {
        let net = net();
        let (lo, hi) = raws(&net, 2, 0.0);
        assert!(matches!(
            detection_loss(&lo, &hi, &[vec![]], &net, &LossWeights::default()),
            Err(Error::Shape { .. })
        ));
    }
}
