use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "robodet", version, about = "Single-shot detector for robot-soccer scenes")]
pub struct Cli {
    /// Seed for every random choice (initialization, shuffling, augmentation, data)
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// key = value training config file; flags given on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a toy soccer dataset with exact annotations
    GenData(GenDataArgs),
    /// Compute per-class anchors (mean box size) from a dataset
    Anchors(AnchorsArgs),
    /// Train a network from scratch
    Train(TrainArgs),
    /// Fine-tune a pretrained network on a new dataset, retraining the first K layers
    Transfer(TransferArgs),
    /// Magnitude-prune a network and optionally fine-tune it with frozen masks
    Prune(PruneArgs),
    /// Run detection on one image
    Detect(DetectArgs),
    /// Evaluate mAP over the standard IoU and center-distance sweep
    Eval(EvalArgs),
    /// Count multiply-accumulates per layer
    Ops(OpsArgs),
    /// Time single-threaded forward passes
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of images
    #[arg(long)]
    pub n: usize,
    /// Palette family: A or B
    #[arg(long, default_value = "A")]
    pub style: String,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory containing index.txt
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Drop boxes smaller than this many pixels [default: 8]
    #[arg(long, value_name = "PX")]
    pub min_size: Option<f32>,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output file [default: <DIR>/anchors.txt]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Architecture: robo, robo_bn or robo_hr
    #[arg(long, default_value = "robo")]
    pub model: String,
    /// Resolution multiplier; input is (k*256)x(k*192)
    #[arg(long, default_value_t = 2)]
    pub k: usize,
}

/// Training hyper-parameters; unset flags fall back to the config file and
/// then to the built-in defaults shown here.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Number of epochs [default: 125]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 64]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Peak learning rate of the cosine schedule [default: 0.001]
    #[arg(long)]
    pub lr_max: Option<f32>,
    /// Final learning rate of the cosine schedule [default: 0.00005]
    #[arg(long)]
    pub lr_min: Option<f32>,
    /// L1 shrink per step, in units of the learning rate [default: 0]
    #[arg(long)]
    pub lambda_l1: Option<f32>,
    /// Box regression loss weight [default: 5]
    #[arg(long)]
    pub lambda_coord: Option<f32>,
    /// Objectness loss weight for responsible slots [default: 1]
    #[arg(long)]
    pub lambda_obj: Option<f32>,
    /// Objectness loss weight for empty slots [default: 0.5]
    #[arg(long)]
    pub lambda_noobj: Option<f32>,
    /// Disable flip and color augmentation
    #[arg(long)]
    pub no_augment: bool,
    /// Validation dataset directory; mAP@16px is logged every 5 epochs
    #[arg(long, value_name = "DIR")]
    pub val: Option<PathBuf>,
    /// Append per-epoch metrics (epoch,loss,lr,val_map) to this CSV
    #[arg(long, value_name = "CSV")]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Anchor file from `robodet anchors` [default: computed from --data]
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Output weight file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Pretrained weight file
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Backbone layers retrained at the full rate; the rest use lr / factor
    #[arg(long)]
    pub layers: Option<usize>,
    /// Learning-rate divisor for the remaining layers [default: 10]
    #[arg(long)]
    pub lr_factor: Option<f32>,
    /// Output weight file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Weight file to prune
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Relative magnitude threshold [default: 0.01]
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Fine-tuning epochs when --data is given [default: 10]
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Fine-tuning learning rate [default: 0.00005]
    #[arg(long)]
    pub finetune_lr: Option<f32>,
    /// Output weight file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Weight file
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Input image (binary PPM)
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Minimum confidence
    #[arg(long, default_value_t = robodet::detect::DEFAULT_CONF_THRESHOLD)]
    pub threshold: f32,
    /// Per-class non-maximum suppression IoU (off when unset)
    #[arg(long)]
    pub nms: Option<f32>,
    /// Detection dump file (`class_id confidence cx cy w h`); stdout when unset
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the image with class-colored boxes here (PPM)
    #[arg(long, value_name = "PPM")]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Weight file; repeat to compare several models
    #[arg(long)]
    pub weights: Vec<PathBuf>,
    /// Pixel size used by the distance criteria, as WxH [default: the dataset's image size]
    #[arg(long, value_name = "WxH")]
    pub image_size: Option<String>,
    /// Evaluate only these criteria (iou:<t> or dist:<px>) instead of the full sweep
    #[arg(long, value_name = "CRIT")]
    pub criterion: Vec<String>,
    /// Write the model-by-criterion mAP table here
    #[arg(long, value_name = "CSV")]
    pub csv: Option<PathBuf>,
    /// Write per-class AP and TP/FP/FN counts here
    #[arg(long, value_name = "CSV")]
    pub per_class: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OpsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Use the masks stored in this weight file
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Print the preset comparison against the Tiny-YOLOv3 reference instead
    #[arg(long)]
    pub compare: bool,
    /// Weight sparsity assumed for the pruned presets of --compare
    #[arg(long, default_value_t = 0.9)]
    pub sparsity: f64,
    /// Also write the per-layer table as CSV
    #[arg(long, value_name = "CSV")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Weight file [default: random weights for --model]
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Timed passes after one warmup
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Images per forward pass
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Sparse kernel use: auto (layers under 35% density), on, or off
    #[arg(long, default_value = "auto")]
    pub sparse: String,
}
