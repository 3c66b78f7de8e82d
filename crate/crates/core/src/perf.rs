//! Multiply-accumulate counting, sparsity-adjusted cost, model comparison
//! tables and a wall-clock benchmark.
//!
//! A convolution costs `k² · in_ch · out_ch · h_out · w_out` MACs. Batch
//! norm, activations and im2col copies are not counted.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{build_robo, build_robo_bn, build_robo_hr, InferenceNet, Mask, ModelSpec, Network};
use crate::tensor::Tensor;

/// Shape of one convolution for counting purposes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvGeom {
    pub name: String,
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn macs(&self) -> u64 {
        (self.kernel * self.kernel * self.in_ch * self.out_ch * self.out_h * self.out_w) as u64
    }

    pub fn params(&self) -> u64 {
        (self.kernel * self.kernel * self.in_ch * self.out_ch + self.out_ch) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOps {
    pub geom: ConvGeom,
    /// Fraction of weights that are nonzero, in `[0, 1]`.
    pub nonzero_fraction: f64,
}

impl LayerOps {
    pub fn macs(&self) -> u64 {
        self.geom.macs()
    }

    pub fn effective_macs(&self) -> f64 {
        self.geom.macs() as f64 * self.nonzero_fraction
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub model: String,
    pub layers: Vec<LayerOps>,
}

impl OpReport {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(LayerOps::macs).sum()
    }

    pub fn effective_macs(&self) -> f64 {
        self.layers.iter().map(LayerOps::effective_macs).sum()
    }

    pub fn params(&self) -> u64 {
        self.layers.iter().map(|l| l.geom.params()).sum()
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n", self.model);
        let _ = writeln!(
            s,
            "{:<10} {:>3} {:>5} {:>5} {:>9} {:>14} {:>8} {:>16}",
            "layer", "k", "in", "out", "output", "MACs", "nonzero", "effective MACs"
        );
        for l in &self.layers {
            let g = &l.geom;
            let _ = writeln!(
                s,
                "{:<10} {:>3} {:>5} {:>5} {:>9} {:>14} {:>7.1}% {:>16.0}",
                g.name,
                g.kernel,
                g.in_ch,
                g.out_ch,
                format!("{}x{}", g.out_w, g.out_h),
                g.macs(),
                100.0 * l.nonzero_fraction,
                l.effective_macs()
            );
        }
        let _ = writeln!(
            s,
            "{:<10} {:>3} {:>5} {:>5} {:>9} {:>14} {:>8} {:>16.0}",
            "total",
            "",
            "",
            "",
            "",
            self.total_macs(),
            "",
            self.effective_macs()
        );
        let _ = writeln!(s, "parameters: {}", self.params());
        s.push_str("MACs count convolutions only; batch norm and activations are excluded.\n");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,layer,kernel,in_ch,out_ch,out_h,out_w,macs,nonzero_fraction,effective_macs\n");
        for l in &self.layers {
            let g = &l.geom;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.6},{:.1}",
                self.model,
                g.name,
                g.kernel,
                g.in_ch,
                g.out_ch,
                g.out_h,
                g.out_w,
                g.macs(),
                l.nonzero_fraction,
                l.effective_macs()
            );
        }
        s
    }
}

/// Every convolution of the spec, backbone then heads.
pub fn conv_geometry(spec: &ModelSpec) -> Vec<ConvGeom> {
    let sizes = spec.all_output_sizes();
    let backbone = spec.backbone_len();
    spec.all_layers()
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(i, (l, (h, w)))| ConvGeom {
            name: match i.checked_sub(backbone) {
                None => format!("L{}", i + 1),
                Some(0) => "head_lo".into(),
                Some(_) => "head_hi".into(),
            },
            kernel: l.kernel,
            in_ch: l.in_ch,
            out_ch: l.out_ch,
            out_h: h,
            out_w: w,
        })
        .collect()
}

/// MACs per layer; with masks, each layer is scaled by its kept fraction.
pub fn count_macs(spec: &ModelSpec, masks: Option<&[Mask]>) -> Result<OpReport> {
    let geoms = conv_geometry(spec);
    if let Some(m) = masks {
        crate::tensor::ensure_dim("count_macs", "mask count", geoms.len(), m.len())?;
    }
    let layers = geoms
        .into_iter()
        .enumerate()
        .map(|(i, geom)| {
            let nonzero_fraction = masks.map_or(1.0, |m| {
                let mask = &m[i];
                if mask.is_empty() {
                    1.0
                } else {
                    (mask.len() - mask.pruned()) as f64 / mask.len() as f64
                }
            });
            LayerOps {
                geom,
                nonzero_fraction,
            }
        })
        .collect();
    Ok(OpReport {
        model: spec.arch.name().to_string(),
        layers,
    })
}

/// [`count_macs`] with the network's own masks.
pub fn count_macs_network(net: &Network) -> OpReport {
    let masks: Vec<Mask> = net.layers.iter().map(|l| l.mask.clone()).collect();
    count_macs(&net.spec, Some(&masks)).expect("one mask per layer")
}

/// Every layer assumed to keep `nonzero` of its weights.
pub fn count_macs_uniform(spec: &ModelSpec, nonzero: f64) -> OpReport {
    let mut r = count_macs(spec, None).expect("no masks");
    for l in &mut r.layers {
        l.nonzero_fraction = nonzero.clamp(0.0, 1.0);
    }
    r.model = format!("{} ({:.0}% sparse)", r.model, 100.0 * (1.0 - nonzero));
    r
}

pub const TINY_YOLO_V3_REF_MACS: u64 = 2_782_480_896;

/// The public Tiny-YOLOv3 configuration at 416×416, convolutions only.
pub fn tiny_yolo_v3_ref() -> OpReport {
    #[rustfmt::skip]
    const TABLE: [(usize, usize, usize, usize); 13] = [
        // kernel, in, out, output side
        (3, 3, 16, 416),
        (3, 16, 32, 208),
        (3, 32, 64, 104),
        (3, 64, 128, 52),
        (3, 128, 256, 26),
        (3, 256, 512, 13),
        (3, 512, 1024, 13),
        (1, 1024, 256, 13),
        (3, 256, 512, 13),
        (1, 512, 255, 13),
        (1, 256, 128, 13),
        (3, 384, 256, 26),
        (1, 256, 255, 26),
    ];
    let layers = TABLE
        .iter()
        .enumerate()
        .map(|(i, &(kernel, in_ch, out_ch, side))| LayerOps {
            geom: ConvGeom {
                name: format!("conv{}", i + 1),
                kernel,
                in_ch,
                out_ch,
                out_h: side,
                out_w: side,
            },
            nonzero_fraction: 1.0,
        })
        .collect();
    OpReport {
        model: "tiny_yolo_v3_ref".into(),
        layers,
    }
}

/// Effective-MAC ratios between every pair of reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reports: Vec<OpReport>,
}

impl Comparison {
    /// `effective(a) / effective(b)`.
    pub fn ratio(&self, a: usize, b: usize) -> f64 {
        self.reports[a].effective_macs() / self.reports[b].effective_macs()
    }

    pub fn to_table(&self) -> String {
        let width = self.reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$} {:>14} {:>16} {:>10}\n", "model", "MACs", "effective MACs", "params");
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{:<width$} {:>14} {:>16.0} {:>10}",
                r.model,
                r.total_macs(),
                r.effective_macs(),
                r.params()
            );
        }
        s.push_str("\nratio of effective MACs (row / column)\n");
        let _ = write!(s, "{:<width$}", "");
        for i in 0..self.reports.len() {
            let _ = write!(s, " {:>8}", format!("[{i}]"));
        }
        s.push('\n');
        for a in 0..self.reports.len() {
            let _ = write!(s, "{:<width$}", format!("[{a}] {}", self.reports[a].model));
            for b in 0..self.reports.len() {
                let _ = write!(s, " {:>8.3}", self.ratio(a, b));
            }
            s.push('\n');
        }
        s.push_str("MACs count convolutions only; batch norm and activations are excluded.\n");
        s
    }
}

pub fn compare(reports: Vec<OpReport>) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Validation("comparison needs at least two models".into()));
    }
    Ok(Comparison { reports })
}

/// Tiny-YOLOv3 reference against ROBO, ROBO-BN and ROBO-HR at their native
/// inputs, unpruned and at `sparsity` weight sparsity.
pub fn preset_comparison(sparsity: f64) -> Comparison {
    let mut reports = vec![tiny_yolo_v3_ref()];
    for spec in [
        build_robo(2).expect("k=2"),
        build_robo_bn(2).expect("k=2"),
        build_robo_hr(),
    ] {
        reports.push(count_macs(&spec, None).expect("no masks"));
        reports.push(count_macs_uniform(&spec, 1.0 - sparsity));
    }
    Comparison { reports }
}

/// Timings of repeated single-threaded forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub times_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl BenchResult {
    pub fn fps(&self, batch: usize) -> f64 {
        1000.0 * batch as f64 / self.mean_ms
    }
}

/// One warmup pass, then `repeats` timed passes.
pub fn benchmark(net: &InferenceNet, input: &Tensor, repeats: usize) -> Result<BenchResult> {
    if repeats < 3 {
        return Err(Error::Validation(format!("benchmark needs at least 3 repeats, got {repeats}")));
    }
    net.forward(input)?;
    let mut times_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = net.forward(input)?;
        times_ms.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let mean_ms = times_ms.iter().sum::<f64>() / repeats as f64;
    let var = times_ms.iter().map(|t| (t - mean_ms).powi(2)).sum::<f64>() / (repeats - 1) as f64;
    Ok(BenchResult {
        times_ms,
        mean_ms,
        std_ms: var.sqrt(),
    })
}
