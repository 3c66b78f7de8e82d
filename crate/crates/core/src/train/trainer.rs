use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::loss::detection_loss;
use super::optim::{adam_step, l1_shrink, AdamState, Schedule};
use super::{LossWeights, TrainConfig};
use crate::data::{Annotation, Dataset, RgbImage};
use crate::detect::preprocess;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MatchCriterion};
use crate::model::Network;

pub const METRICS_HEADER: &str = "epoch,loss,lr,val_map";
/// Criterion used for the periodic validation score.
pub const VALIDATION_CRITERION: MatchCriterion = MatchCriterion::Distance(16.0);

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f32,
    pub val_map: Option<f64>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let val = self.val_map.map_or(String::new(), |v| format!("{v:.6}"));
        format!("{},{:.6},{:e},{}", self.epoch, self.loss, self.lr, val)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
    /// Same-cell target collisions seen over the run.
    pub collisions: usize,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for e in &self.epochs {
            s.push_str(&e.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Everything a training run needs beyond the config.
#[derive(Debug, Clone)]
pub struct TrainOptions<'a> {
    pub epochs: usize,
    pub schedule: Schedule,
    /// Learning-rate multiplier per layer (heads included).
    pub layer_lr_scale: Option<Vec<f32>>,
    pub val: Option<&'a Dataset>,
    pub metrics_csv: Option<&'a Path>,
    /// Verify after every step that pruned weights are exactly zero.
    pub check_masks: bool,
}

impl<'a> TrainOptions<'a> {
    /// Full cosine schedule over `cfg.epochs`.
    pub fn from_config(cfg: &TrainConfig) -> Self {
        TrainOptions {
            epochs: cfg.epochs,
            schedule: Schedule::Cosine {
                lr_max: cfg.lr_max,
                lr_min: cfg.lr_min,
            },
            layer_lr_scale: None,
            val: None,
            metrics_csv: None,
            check_masks: false,
        }
    }

    pub fn with_val(mut self, val: Option<&'a Dataset>) -> Self {
        self.val = val;
        self
    }

    pub fn with_metrics(mut self, path: Option<&'a Path>) -> Self {
        self.metrics_csv = path;
        self
    }
}

/// Sample indices for one epoch: a seeded shuffle cut into batches.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

fn layer_norms(net: &Network) -> Vec<f32> {
    net.layers
        .iter()
        .map(|l| l.conv.weights.data().iter().map(|w| w * w).sum::<f32>().sqrt())
        .collect()
}

fn masks_hold(net: &Network) -> bool {
    net.layers.iter().all(|l| {
        l.mask.is_all_pass()
            || l
                .conv
                .weights
                .data()
                .iter()
                .zip(l.mask.keep_flags())
                .all(|(w, &k)| k || w.to_bits() == 0)
    })
}

/// Mini-batch training with Adam, shuffling and augmentation per epoch.
pub fn train_loop(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    lw: &LossWeights,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    cfg.validate()?;
    lw.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if let Some(scale) = &opts.layer_lr_scale {
        crate::tensor::ensure_dim("train_loop", "layer lr scales", net.layers.len(), scale.len())?;
    }
    if let Some(path) = opts.metrics_csv {
        fs::write(path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(path, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::for_network(net);
    let steps_per_epoch = data.len().div_ceil(cfg.batch);
    let total_steps = opts.epochs * steps_per_epoch;
    let mut step = 0;
    let mut log = TrainLog::default();

    for epoch in 1..=opts.epochs {
        let mut loss_sum = 0.0;
        let mut lr = opts.schedule.lr(step, total_steps);
        for (b, batch) in epoch_batches(data.len(), cfg.batch, &mut rng).iter().enumerate() {
            let mut images: Vec<RgbImage> = Vec::with_capacity(batch.len());
            let mut targets: Vec<Vec<Annotation>> = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &data.samples[i];
                let (img, anns) = if cfg.augment {
                    augment(&s.image, &s.annotations, &mut rng)
                } else {
                    (s.image.clone(), s.annotations.clone())
                };
                images.push(img);
                targets.push(anns);
            }
            let refs: Vec<&RgbImage> = images.iter().collect();
            let input = preprocess(&refs, &net.spec)?;
            let (lo, hi, cache) = net.forward_train(&input)?;
            let out = detection_loss(&lo, &hi, &targets, net, lw)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    layer_norms: layer_norms(net),
                });
            }
            log.collisions += out.collisions;
            let grads = net.backward(&cache, &out.grad_lo, &out.grad_hi)?;
            lr = opts.schedule.lr(step, total_steps);
            adam_step(net, &grads, &mut adam, lr, opts.layer_lr_scale.as_deref());
            l1_shrink(net, lw.l1, lr, opts.layer_lr_scale.as_deref());
            if opts.check_masks {
                assert!(masks_hold(net), "pruned weight drifted from zero at epoch {epoch}");
            }
            loss_sum += out.loss;
            step += 1;
        }
        let val_map = match opts.val {
            Some(val) if cfg.val_every > 0 && epoch % cfg.val_every == 0 => {
                Some(evaluate(net, val, &[VALIDATION_CRITERION])?[0].map)
            }
            _ => None,
        };
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / steps_per_epoch as f64,
            lr,
            val_map,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.5} lr {lr:.3e}{}",
            opts.epochs,
            m.loss,
            val_map.map_or(String::new(), |v| format!(" val mAP@16px {v:.4}"))
        );
        if let Some(path) = opts.metrics_csv {
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            writeln!(f, "{}", m.csv_row()).map_err(|e| Error::io(path, e))?;
        }
        log.epochs.push(m);
    }
    if log.collisions > 0 {
        log::info!("{} same-cell target collisions resolved by box area", log.collisions);
    }
    Ok(log)
}

/// Standard training run over `cfg.epochs` with the cosine schedule.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    lw: &LossWeights,
    val: Option<&Dataset>,
    metrics: Option<&Path>,
) -> Result<TrainLog> {
    let opts = TrainOptions::from_config(cfg).with_val(val).with_metrics(metrics);
    train_loop(net, data, cfg, lw, &opts)
}

/// Retrains a pruned network at the constant fine-tune rate while holding
/// pruned weights at zero.
pub fn finetune_pruned(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    lw: &LossWeights,
    val: Option<&Dataset>,
    metrics: Option<&Path>,
) -> Result<TrainLog> {
    if net.layers.iter().all(|l| l.mask.is_all_pass()) {
        log::warn!("fine-tuning a network without pruned weights");
    }
    let opts = TrainOptions {
        epochs: cfg.finetune_epochs,
        schedule: Schedule::Constant(cfg.finetune_lr),
        check_masks: true,
        ..TrainOptions::from_config(cfg)
    }
    .with_val(val)
    .with_metrics(metrics);
    train_loop(net, data, cfg, lw, &opts)
}

/// Per-layer learning-rate multipliers for transfer: the first `k_t`
/// backbone layers at 1, everything else (heads included) at `1/factor`.
pub fn transfer_lr_scale(net: &Network, k_t: usize, factor: f32) -> Result<Vec<f32>> {
    let b = net.backbone_len();
    if k_t > b {
        return Err(Error::TransferRange {
            requested: k_t,
            backbone_len: b,
        });
    }
    Ok((0..net.layers.len())
        .map(|i| if i < k_t { 1.0 } else { 1.0 / factor })
        .collect())
}

/// Continues training a pretrained network on a new dataset, retraining the
/// first `cfg.transfer_layers` layers at the full schedule.
pub fn transfer_finetune(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    lw: &LossWeights,
    val: Option<&Dataset>,
    metrics: Option<&Path>,
) -> Result<TrainLog> {
    let k_t = cfg
        .transfer_layers
        .ok_or_else(|| Error::Validation("transfer needs transfer_layers to be set".into()))?;
    let opts = TrainOptions {
        layer_lr_scale: Some(transfer_lr_scale(net, k_t, cfg.transfer_lr_factor)?),
        ..TrainOptions::from_config(cfg)
    }
    .with_val(val)
    .with_metrics(metrics);
    train_loop(net, data, cfg, lw, &opts)
}

/// Parameters retrained at the full rate when transferring `k_t` layers.
pub fn retrainable_params(net: &Network, k_t: usize) -> Result<usize> {
    if k_t > net.backbone_len() {
        return Err(Error::TransferRange {
            requested: k_t,
            backbone_len: net.backbone_len(),
        });
    }
    net.spec.count_params(Some(k_t))
}
