//! Detection loss, Adam with cosine annealing, augmentation, magnitude
//! pruning with mask-frozen fine-tuning, and first-k transfer.

mod augment;
mod config;
mod loss;
mod optim;
mod prune;
mod trainer;

pub use augment::{augment, flip_horizontal, Jitter, HUE_RANGE_DEG, PHOTOMETRIC_RANGE};
pub use config::{format_config, load_config, parse_config, set_config_value, TrainConfig};
pub use loss::{detection_loss, l1_norm, LossOutput, LossWeights};
pub use optim::{adam_step, cosine_lr, l1_shrink, AdamState, Schedule};
pub use prune::{prunable_fraction, prune, LayerPruning, PruneReport};
pub use trainer::{
    epoch_batches, finetune_pruned, retrainable_params, train, train_loop, transfer_finetune,
    transfer_lr_scale, EpochMetrics, TrainLog, TrainOptions, METRICS_HEADER,
    VALIDATION_CRITERION,
};
