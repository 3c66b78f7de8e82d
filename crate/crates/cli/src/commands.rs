use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use robodet::data::{
    default_min_size, generate_toy_dataset, Dataset, DatasetIndex, RgbImage, ToyStyle,
};
use robodet::detect::{compute_anchors, format_detections, AnchorSet, Detector};
use robodet::eval::{default_sweep, evaluate, per_class_csv, sweep_csv, EvalReport, MatchCriterion};
use robodet::model::{init_network, load_weights, save_weights, Architecture, InferenceNet, ModelSpec, Network, SPARSE_DENSITY_THRESHOLD};
use robodet::perf::{benchmark, count_macs, count_macs_network, preset_comparison};
use robodet::tensor::Tensor;
use robodet::train::{
    finetune_pruned, load_config, prune, train, transfer_finetune, LossWeights, TrainConfig,
};
use robodet::Error;

use crate::args::*;
use crate::overlay::render_overlay;

/// Settings shared by every command.
pub struct Globals {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    match value {
        Some(v) => Ok(v),
        None => Err(Error::Validation(format!("missing required flag {flag}")).into()),
    }
}

fn validation(msg: String) -> anyhow::Error {
    Error::Validation(msg).into()
}

fn loader_threads() -> usize {
    std::env::var("ROBODET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn load_data(dir: &Path, min_size_px: Option<f32>) -> Result<Dataset> {
    let mut data = DatasetIndex::read(dir)?.load_parallel(loader_threads())?;
    let min = match min_size_px {
        Some(px) => px / data.image_width as f32,
        None => default_min_size(data.image_width),
    };
    data.filter_min_size(min);
    Ok(data)
}

fn data_flag(args: &DataArgs) -> Result<Dataset> {
    load_data(require(&args.data, "--data")?, args.min_size)
}

fn build_spec(model: &ModelArgs) -> Result<ModelSpec> {
    let arch: Architecture = model.model.parse()?;
    Ok(arch.build(model.k)?)
}

/// Config file first, then explicit flags.
fn hyper(globals: &Globals, h: &HyperArgs) -> Result<(TrainConfig, LossWeights)> {
    let (mut cfg, mut lw) = match &globals.config {
        Some(path) => load_config(path)?,
        None => (TrainConfig::default(), LossWeights::default()),
    };
    if let Some(s) = globals.seed {
        cfg.seed = s;
    }
    macro_rules! set {
        ($($flag:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = h.$flag { $target = v; })*
        };
    }
    set!(
        epochs => cfg.epochs,
        batch => cfg.batch,
        lr_max => cfg.lr_max,
        lr_min => cfg.lr_min,
        lambda_l1 => lw.l1,
        lambda_coord => lw.coord,
        lambda_obj => lw.obj,
        lambda_noobj => lw.noobj,
    );
    if h.no_augment {
        cfg.augment = false;
    }
    cfg.validate()?;
    lw.validate()?;
    Ok((cfg, lw))
}

fn val_data(h: &HyperArgs, min_size: Option<f32>) -> Result<Option<Dataset>> {
    h.val.as_deref().map(|d| load_data(d, min_size)).transpose()
}

pub fn gen_data(g: &Globals, a: &GenDataArgs) -> Result<()> {
    let style: ToyStyle = a.style.parse()?;
    let index = generate_toy_dataset(a.n, style, g.seed.unwrap_or(0), &a.out)?;
    println!("wrote {} images to {}", index.entries.len(), a.out.display());
    Ok(())
}

pub fn anchors(_: &Globals, a: &AnchorsArgs) -> Result<()> {
    let dir = require(&a.data.data, "--data")?;
    let data = data_flag(&a.data)?;
    let anns: Vec<_> = data.annotations().copied().collect();
    let set = compute_anchors(&anns)?;
    let out = a.out.clone().unwrap_or_else(|| dir.join("anchors.txt"));
    fs::write(&out, set.to_text()).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", set.to_text());
    Ok(())
}

fn save(net: &Network, out: &Path) -> Result<()> {
    save_weights(net, out)?;
    println!("saved {}", out.display());
    Ok(())
}

pub fn train_cmd(g: &Globals, a: &TrainArgs) -> Result<()> {
    let out = require(&a.out, "--out")?;
    let (cfg, lw) = hyper(g, &a.hyper)?;
    let data = data_flag(&a.data)?;
    let val = val_data(&a.hyper, a.data.min_size)?;
    let mut net = init_network(build_spec(&a.model)?, cfg.seed);
    net.anchors = match &a.anchors {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            AnchorSet::from_text(&text)?
        }
        None => compute_anchors(&data.annotations().copied().collect::<Vec<_>>())?,
    };
    let log = train(&mut net, &data, &cfg, &lw, val.as_ref(), a.hyper.metrics.as_deref())?;
    if let Some(last) = log.epochs.last() {
        println!("final loss {:.5}", last.loss);
    }
    save(&net, out)
}

pub fn transfer(g: &Globals, a: &TransferArgs) -> Result<()> {
    let weights = require(&a.weights, "--weights")?;
    let layers = *require(&a.layers, "--layers")?;
    let out = require(&a.out, "--out")?;
    let (mut cfg, lw) = hyper(g, &a.hyper)?;
    cfg.transfer_layers = Some(layers);
    if let Some(f) = a.lr_factor {
        cfg.transfer_lr_factor = f;
    }
    cfg.validate()?;
    let data = data_flag(&a.data)?;
    let val = val_data(&a.hyper, a.data.min_size)?;
    let mut net = load_weights(weights)?;
    transfer_finetune(&mut net, &data, &cfg, &lw, val.as_ref(), a.hyper.metrics.as_deref())?;
    save(&net, out)
}

pub fn prune_cmd(g: &Globals, a: &PruneArgs) -> Result<()> {
    let weights = require(&a.weights, "--weights")?;
    let out = require(&a.out, "--out")?;
    let (mut cfg, lw) = hyper(g, &a.hyper)?;
    if let Some(t) = a.threshold {
        cfg.prune_threshold = t;
    }
    if let Some(e) = a.finetune_epochs {
        cfg.finetune_epochs = e;
    }
    if let Some(lr) = a.finetune_lr {
        cfg.finetune_lr = lr;
    }
    cfg.validate()?;
    let mut net = load_weights(weights)?;
    let report = prune(&mut net, cfg.prune_threshold)?;
    println!("{report}");
    if a.data.data.is_some() {
        let data = data_flag(&a.data)?;
        let val = val_data(&a.hyper, a.data.min_size)?;
        finetune_pruned(&mut net, &data, &cfg, &lw, val.as_ref(), a.hyper.metrics.as_deref())?;
    }
    save(&net, out)
}

pub fn detect(_: &Globals, a: &DetectArgs) -> Result<()> {
    let weights = require(&a.weights, "--weights")?;
    let image_path = require(&a.image, "--image")?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(validation(format!("--threshold must lie in [0, 1], got {}", a.threshold)));
    }
    if let Some(t) = a.nms {
        if !(0.0..=1.0).contains(&t) {
            return Err(validation(format!("--nms must lie in [0, 1], got {t}")));
        }
    }
    let net = load_weights(weights)?;
    let image = RgbImage::read_ppm(image_path)?;
    let mut det = Detector::new(&net, None)?;
    det.conf_threshold = a.threshold;
    det.nms_iou = a.nms;
    let dets = det.detect(&[&image])?.remove(0);
    let text = format_detections(&dets);
    match &a.out {
        Some(path) => fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    if let Some(path) = &a.overlay {
        render_overlay(&image, &dets).write_ppm(path)?;
    }
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || validation(format!("--image-size expects WxH, got `{s}`"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    let (w, h): (usize, usize) = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

pub fn eval_cmd(_: &Globals, a: &EvalArgs) -> Result<()> {
    if a.weights.is_empty() {
        return Err(validation("missing required flag --weights".into()));
    }
    let mut data = data_flag(&a.data)?;
    if let Some(s) = &a.image_size {
        // Distances are measured in the stated pixel grid.
        (data.image_width, data.image_height) = parse_size(s)?;
    }
    let sweep = if a.criterion.is_empty() {
        default_sweep()
    } else {
        a.criterion
            .iter()
            .map(|c| c.parse::<MatchCriterion>())
            .collect::<robodet::Result<Vec<_>>>()?
    };
    let mut rows: Vec<(String, Vec<EvalReport>)> = Vec::new();
    for w in &a.weights {
        let net = load_weights(w)?;
        let name = w.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        rows.push((name, evaluate(&net, &data, &sweep)?));
    }
    let table: Vec<(&str, &[EvalReport])> = rows.iter().map(|(n, r)| (n.as_str(), r.as_slice())).collect();
    let csv = sweep_csv(&table);
    print!("{csv}");
    if let Some(path) = &a.csv {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.per_class {
        let text: String = rows
            .iter()
            .enumerate()
            .map(|(i, (n, r))| {
                let t = per_class_csv(n, r);
                if i == 0 { t } else { t.lines().skip(1).map(|l| format!("{l}\n")).collect() }
            })
            .collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn ops(_: &Globals, a: &OpsArgs) -> Result<()> {
    if a.compare {
        if !(0.0..1.0).contains(&a.sparsity) {
            return Err(validation(format!("--sparsity must lie in [0, 1), got {}", a.sparsity)));
        }
        print!("{}", preset_comparison(a.sparsity).to_table());
        return Ok(());
    }
    let report = match &a.weights {
        Some(w) => count_macs_network(&load_weights(w)?),
        None => count_macs(&build_spec(&a.model)?, None)?,
    };
    print!("{}", report.to_table());
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn bench(g: &Globals, a: &BenchArgs) -> Result<()> {
    let net = match &a.weights {
        Some(w) => load_weights(w)?,
        None => init_network(build_spec(&a.model)?, g.seed.unwrap_or(0)),
    };
    let sparse_below = match a.sparse.as_str() {
        "auto" => Some(SPARSE_DENSITY_THRESHOLD),
        "on" => Some(f64::INFINITY),
        "off" => None,
        other => bail!(validation(format!("--sparse expects auto, on or off, got `{other}`"))),
    };
    if a.batch == 0 {
        return Err(validation("--batch must be at least 1".into()));
    }
    let inet = InferenceNet::compile(&net, sparse_below)?;
    let input = Tensor::full(net.input_shape(a.batch), 0.5);
    let r = benchmark(&inet, &input, a.repeats)?;
    println!(
        "{} k={} batch {}: {:.3} ± {:.3} ms over {} runs ({:.1} FPS, {} sparse layers)",
        net.spec.arch,
        net.spec.k,
        a.batch,
        r.mean_ms,
        r.std_ms,
        r.times_ms.len(),
        r.fps(a.batch),
        inet.sparse_layers()
    );
    Ok(())
}
