//! Declarative layer tables for the ROBO detector family.

use std::fmt;
use std::str::FromStr;

use crate::class::Class;
use crate::error::{Error, Result};

/// Channels each head emits per owned class: (tx, ty, tw, th, to).
pub const VALUES_PER_CLASS: usize = 5;
pub const HEAD_CHANNELS: usize = 2 * VALUES_PER_CLASS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Leaky,
    Linear,
}

/// Which detection head a backbone layer feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadTap {
    /// Coarse grid: goalposts and robots.
    Lo,
    /// Twice-finer grid: balls and crossings.
    Hi,
}

impl HeadTap {
    pub fn label(self) -> &'static str {
        match self {
            HeadTap::Lo => "head_lo",
            HeadTap::Hi => "head_hi",
        }
    }

    pub fn classes(self) -> [Class; 2] {
        match self {
            HeadTap::Lo => [Class::Goalpost, Class::Robot],
            HeadTap::Hi => [Class::Ball, Class::Crossing],
        }
    }

    /// Head that predicts `class`, and the slot it occupies there.
    pub fn owning(class: Class) -> (HeadTap, usize) {
        match class {
            Class::Ball => (HeadTap::Hi, 0),
            Class::Crossing => (HeadTap::Hi, 1),
            Class::Goalpost => (HeadTap::Lo, 0),
            Class::Robot => (HeadTap::Lo, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    /// 1-based position in the backbone.
    pub index: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub has_bn: bool,
    pub activation: Activation,
    pub tap: Option<HeadTap>,
}

impl LayerSpec {
    fn conv(index: usize, kernel: usize, stride: usize, in_ch: usize, out_ch: usize) -> Self {
        LayerSpec {
            index,
            kernel,
            stride,
            in_ch,
            out_ch,
            has_bn: true,
            activation: Activation::Leaky,
            tap: None,
        }
    }

    /// Weight plus bias elements.
    pub fn params(&self) -> usize {
        self.kernel * self.kernel * self.in_ch * self.out_ch + self.out_ch
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSpec {
    pub tap: HeadTap,
    /// 1-based backbone index whose output the head reads.
    pub source_layer: usize,
    pub in_ch: usize,
    pub classes_owned: [Class; 2],
}

impl HeadSpec {
    pub fn channels(&self) -> usize {
        VALUES_PER_CLASS * self.classes_owned.len()
    }

    /// The head's 1×1 linear convolution.
    pub fn layer(&self) -> LayerSpec {
        LayerSpec {
            index: 0,
            kernel: 1,
            stride: 1,
            in_ch: self.in_ch,
            out_ch: self.channels(),
            has_bn: false,
            activation: Activation::Linear,
            tap: None,
        }
    }

    pub fn params(&self) -> usize {
        self.layer().params()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    Robo,
    RoboBn,
    RoboHr,
    Custom(String),
}

impl Architecture {
    pub fn name(&self) -> &str {
        match self {
            Architecture::Robo => "robo",
            Architecture::RoboBn => "robo_bn",
            Architecture::RoboHr => "robo_hr",
            Architecture::Custom(name) => name,
        }
    }

    /// Builds the canonical table for a built-in architecture.
    pub fn build(&self, k: usize) -> Result<ModelSpec> {
        match self {
            Architecture::Robo => build_robo(k),
            Architecture::RoboBn => build_robo_bn(k),
            Architecture::RoboHr => Ok(build_robo_hr()),
            Architecture::Custom(name) => Err(Error::Spec(format!(
                "`{name}` is not a built-in architecture"
            ))),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robo" => Ok(Architecture::Robo),
            "robo_bn" => Ok(Architecture::RoboBn),
            "robo_hr" => Ok(Architecture::RoboHr),
            other => Err(Error::Spec(format!(
                "unknown architecture `{other}` (expected robo, robo_bn or robo_hr)"
            ))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Resolution multiplier; input is `k·64·(4×3)`.
    pub k: usize,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    /// `[head_lo, head_hi]`.
    pub heads: [HeadSpec; 2],
}

/// (kernel, stride, in, out) rows of the ROBO backbone.
const ROBO_TABLE: [(usize, usize, usize, usize); 15] = [
    (3, 2, 3, 4),
    (3, 2, 4, 8),
    (3, 2, 8, 16),
    (3, 1, 16, 16),
    (3, 2, 16, 32),
    (3, 1, 32, 32),
    (3, 2, 32, 64),
    (3, 1, 64, 64),
    (3, 1, 64, 64),
    (3, 2, 64, 128),
    (3, 1, 128, 128),
    (1, 1, 128, 256),
    (1, 1, 256, 256),
    (1, 1, 256, 256),
    (1, 1, 256, 256),
];
const ROBO_TAP_HI: usize = 9;
const ROBO_TAP_LO: usize = 15;

fn robo_layers() -> Vec<LayerSpec> {
    ROBO_TABLE
        .iter()
        .enumerate()
        .map(|(i, &(kernel, stride, cin, cout))| {
            let mut l = LayerSpec::conv(i + 1, kernel, stride, cin, cout);
            l.tap = match i + 1 {
                ROBO_TAP_HI => Some(HeadTap::Hi),
                ROBO_TAP_LO => Some(HeadTap::Lo),
                _ => None,
            };
            l
        })
        .collect()
}

/// ROBO at input `(k·192) × (k·256)`.
pub fn build_robo(k: usize) -> Result<ModelSpec> {
    if k == 0 {
        return Err(Error::Spec("resolution multiplier k must be at least 1".into()));
    }
    ModelSpec::assemble(Architecture::Robo, k, (k * 192, k * 256), robo_layers())
}

/// ROBO without its first strided layer, fed a 192×256 image so both heads
/// keep ROBO(k=2)'s grids.
pub fn build_robo_hr() -> ModelSpec {
    let mut layers = robo_layers();
    layers.remove(0);
    layers[0].in_ch = 3;
    for (i, l) in layers.iter_mut().enumerate() {
        l.index = i + 1;
    }
    ModelSpec::assemble(Architecture::RoboHr, 1, (192, 256), layers)
        .expect("canonical ROBO-HR table is valid")
}

/// ROBO with doubled widths and a halving 1×1 bottleneck in front of every
/// 3×3 convolution whose input is wider than 64 channels.
pub fn build_robo_bn(k: usize) -> Result<ModelSpec> {
    if k == 0 {
        return Err(Error::Spec("resolution multiplier k must be at least 1".into()));
    }
    let mut layers = Vec::new();
    for base in robo_layers() {
        let cin = if base.index == 1 { 3 } else { base.in_ch * 2 };
        let cout = base.out_ch * 2;
        let mut conv_in = cin;
        if base.kernel == 3 && cin > 64 {
            conv_in = cin / 2;
            layers.push(LayerSpec::conv(0, 1, 1, cin, conv_in));
        }
        let mut l = LayerSpec::conv(0, base.kernel, base.stride, conv_in, cout);
        l.tap = base.tap;
        layers.push(l);
    }
    for (i, l) in layers.iter_mut().enumerate() {
        l.index = i + 1;
    }
    ModelSpec::assemble(Architecture::RoboBn, k, (k * 192, k * 256), layers)
}

impl ModelSpec {
    fn assemble(
        arch: Architecture,
        k: usize,
        (height, width): (usize, usize),
        layers: Vec<LayerSpec>,
    ) -> Result<ModelSpec> {
        let find_tap = |tap: HeadTap| -> Result<HeadSpec> {
            let mut hits = layers.iter().filter(|l| l.tap == Some(tap));
            let layer = hits
                .next()
                .ok_or_else(|| Error::Spec(format!("no layer is tapped by {}", tap.label())))?;
            if hits.next().is_some() {
                return Err(Error::Spec(format!("{} is tapped more than once", tap.label())));
            }
            Ok(HeadSpec {
                tap,
                source_layer: layer.index,
                in_ch: layer.out_ch,
                classes_owned: tap.classes(),
            })
        };
        let heads = [find_tap(HeadTap::Lo)?, find_tap(HeadTap::Hi)?];
        let spec = ModelSpec {
            arch,
            k,
            input_channels: 3,
            input_height: height,
            input_width: width,
            layers,
            heads,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::Spec("model has no layers".into()))?;
        if first.in_ch != self.input_channels {
            return Err(Error::Spec(format!(
                "layer 1 takes {} channels but the input has {}",
                first.in_ch, self.input_channels
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.index != i + 1 {
                return Err(Error::Spec(format!("layer at position {} has index {}", i + 1, l.index)));
            }
            if !matches!(l.kernel, 1 | 3) || !matches!(l.stride, 1 | 2) {
                return Err(Error::Spec(format!(
                    "layer {}: unsupported kernel {} / stride {}",
                    l.index, l.kernel, l.stride
                )));
            }
            if l.stride == 2 && l.out_ch <= l.in_ch {
                return Err(Error::Spec(format!(
                    "layer {}: strided layer must widen channels ({} -> {})",
                    l.index, l.in_ch, l.out_ch
                )));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.in_ch != l.out_ch {
                    return Err(Error::Spec(format!(
                        "layer {} outputs {} channels but layer {} expects {}",
                        l.index, l.out_ch, next.index, next.in_ch
                    )));
                }
            }
        }
        let total = self.total_stride();
        if !self.input_height.is_multiple_of(total) || !self.input_width.is_multiple_of(total) {
            return Err(Error::Spec(format!(
                "input {}x{} is not divisible by the total stride {total}",
                self.input_width, self.input_height
            )));
        }
        Ok(())
    }

    pub fn backbone_len(&self) -> usize {
        self.layers.len()
    }

    pub fn head(&self, tap: HeadTap) -> &HeadSpec {
        match tap {
            HeadTap::Lo => &self.heads[0],
            HeadTap::Hi => &self.heads[1],
        }
    }

    /// Product of strides over backbone layers `1..=upto`.
    pub fn stride_upto(&self, upto: usize) -> usize {
        self.layers[..upto].iter().map(|l| l.stride).product()
    }

    pub fn total_stride(&self) -> usize {
        self.stride_upto(self.layers.len())
    }

    /// Output `(height, width)` of backbone layer `index` (1-based).
    pub fn feature_size(&self, index: usize) -> (usize, usize) {
        let s = self.stride_upto(index);
        (self.input_height / s, self.input_width / s)
    }

    /// `(rows, cols)` of a head's prediction grid.
    pub fn head_grid(&self, tap: HeadTap) -> (usize, usize) {
        self.feature_size(self.head(tap).source_layer)
    }

    /// Weights plus biases over backbone layers `1..=upto` (all when `None`).
    /// Heads and batch-norm parameters are not included.
    pub fn count_params(&self, upto: Option<usize>) -> Result<usize> {
        let n = upto.unwrap_or(self.layers.len());
        if n > self.layers.len() {
            return Err(Error::Spec(format!(
                "cannot count {n} layers; the backbone has {}",
                self.layers.len()
            )));
        }
        Ok(self.layers[..n].iter().map(LayerSpec::params).sum())
    }

    pub fn head_params(&self) -> usize {
        self.heads.iter().map(HeadSpec::params).sum()
    }

    /// Four per-channel values for every normalized layer.
    pub fn bn_params(&self) -> usize {
        self.layers.iter().filter(|l| l.has_bn).map(|l| 4 * l.out_ch).sum()
    }

    /// Backbone plus heads, BN excluded.
    pub fn total_params(&self) -> usize {
        self.count_params(None).unwrap_or(0) + self.head_params()
    }

    /// Backbone layers followed by `[head_lo, head_hi]`.
    pub fn all_layers(&self) -> Vec<LayerSpec> {
        let mut all = self.layers.clone();
        all.extend(self.heads.iter().map(HeadSpec::layer));
        all
    }

    /// Output `(height, width)` for every entry of [`ModelSpec::all_layers`].
    pub fn all_output_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes: Vec<_> = (1..=self.layers.len()).map(|i| self.feature_size(i)).collect();
        sizes.push(self.head_grid(HeadTap::Lo));
        sizes.push(self.head_grid(HeadTap::Hi));
        sizes
    }

    /// Parses the line-oriented table format:
    /// `conv <kernel> <stride> <in> <out> [bn] [tap=head_lo|head_hi]`.
    pub fn from_text(
        text: &str,
        name: &str,
        (height, width): (usize, usize),
    ) -> Result<ModelSpec> {
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: name.to_string(),
                line: lineno + 1,
                msg,
            };
            let mut fields = line.split_whitespace();
            if fields.next() != Some("conv") {
                return Err(err(format!("expected `conv`, found `{line}`")));
            }
            let mut nums = [0usize; 4];
            for (slot, what) in nums.iter_mut().zip(["kernel", "stride", "in", "out"]) {
                let f = fields.next().ok_or_else(|| err(format!("missing {what}")))?;
                *slot = f
                    .parse()
                    .map_err(|_| err(format!("{what} `{f}` is not a positive integer")))?;
            }
            let mut l = LayerSpec::conv(layers.len() + 1, nums[0], nums[1], nums[2], nums[3]);
            l.has_bn = false;
            for f in fields {
                match f {
                    "bn" => l.has_bn = true,
                    "tap=head_lo" => l.tap = Some(HeadTap::Lo),
                    "tap=head_hi" => l.tap = Some(HeadTap::Hi),
                    other => return Err(err(format!("unknown option `{other}`"))),
                }
            }
            layers.push(l);
        }
        let arch = name
            .parse()
            .unwrap_or_else(|_| Architecture::Custom(name.to_string()));
        let k = (width / 256).max(1);
        ModelSpec::assemble(arch, k, (height, width), layers)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# {} input {}x{}x{}\n",
            self.arch, self.input_channels, self.input_height, self.input_width
        );
        for l in &self.layers {
            out.push_str(&format!("conv {} {} {} {}", l.kernel, l.stride, l.in_ch, l.out_ch));
            if l.has_bn {
                out.push_str(" bn");
            }
            if let Some(tap) = l.tap {
                out.push_str(&format!(" tap={}", tap.label()));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robo_k2_grids_and_stride() {
        let spec = build_robo(2).unwrap();
        assert_eq!((spec.input_height, spec.input_width), (384, 512));
        assert_eq!(spec.total_stride(), 64);
        assert_eq!(spec.head_grid(HeadTap::Lo), (6, 8));
        assert_eq!(spec.head_grid(HeadTap::Hi), (12, 16));
        assert_eq!(spec.heads.iter().map(HeadSpec::channels).sum::<usize>(), 20);
    }

    #[test]
    fn robo_k1_grid() {
        let spec = build_robo(1).unwrap();
        assert_eq!((spec.input_height, spec.input_width), (192, 256));
        assert_eq!(spec.head_grid(HeadTap::Lo), (3, 4));
    }

    #[test]
    fn robo_structure() {
        let spec = build_robo(2).unwrap();
        assert_eq!(spec.backbone_len(), 15);
        let strided: Vec<usize> = spec.layers.iter().filter(|l| l.stride == 2).map(|l| l.index).collect();
        assert_eq!(strided.len(), 6);
        assert_eq!(&strided[..3], &[1, 2, 3]);
        assert_eq!(spec.head(HeadTap::Hi).source_layer, 9);
        assert_eq!(spec.head(HeadTap::Lo).source_layer, 15);
        assert_eq!(spec.layers.iter().map(|l| l.out_ch).max(), Some(256));
        assert!(build_robo(0).is_err());
    }

    #[test]
    fn robo_prefix_counts() {
        let spec = build_robo(2).unwrap();
        // 3·4·9+4 + 4·8·9+8 + 8·16·9+16
        assert_eq!(spec.count_params(Some(3)).unwrap(), 1576);
        assert_eq!(spec.count_params(Some(0)).unwrap(), 0);
        for (upto, paper) in [(3, 1_500.0), (5, 8_500.0), (7, 36_000.0), (9, 110_000.0)] {
            let got = spec.count_params(Some(upto)).unwrap() as f64;
            assert!((got / paper - 1.0).abs() < 0.10, "prefix {upto}: {got}");
        }
        let total = spec.total_params() as f64;
        assert!((total / 555_000.0 - 1.0).abs() < 0.05, "{total}");
        assert!(spec.count_params(Some(16)).is_err());
    }

    #[test]
    fn robo_hr_shares_robo_k2_grids() {
        let hr = build_robo_hr();
        assert_eq!(hr.total_stride(), 32);
        assert_eq!((hr.input_height, hr.input_width), (192, 256));
        assert_eq!(hr.head_grid(HeadTap::Lo), (6, 8));
        assert_eq!(hr.head_grid(HeadTap::Hi), (12, 16));
        assert_eq!(hr.layers[0].in_ch, 3);
        assert_eq!(hr.backbone_len(), 14);
    }

    #[test]
    fn robo_bn_bottlenecks() {
        let spec = build_robo_bn(2).unwrap();
        assert_eq!(spec.total_stride(), 64);
        for pair in spec.layers.windows(2) {
            let (prev, conv) = (&pair[0], &pair[1]);
            if conv.kernel == 3 && prev.kernel == 1 && prev.out_ch * 2 == prev.in_ch {
                assert!(conv.in_ch <= prev.in_ch / 2);
            }
        }
        let robo = build_robo(2).unwrap();
        let wide = robo.layers.iter().filter(|l| l.kernel == 3 && l.index > 1 && 2 * l.in_ch > 64);
        assert_eq!(spec.layers.len(), robo.layers.len() + wide.count());
        for pair in spec.layers.windows(2) {
            if pair[1].kernel == 3 {
                let pre = if pair[0].kernel == 1 { pair[0].in_ch } else { pair[0].out_ch };
                assert!(pre <= 64 || pair[1].in_ch * 2 <= pre, "layer {}", pair[1].index);
            }
        }
        let total = spec.total_params();
        assert!((1_350_000..=1_820_000).contains(&total), "{total}");
        assert_eq!(spec.head_grid(HeadTap::Lo), (6, 8));
    }

    #[test]
    fn strided_layers_widen_channels() {
        for spec in [build_robo(1).unwrap(), build_robo_bn(1).unwrap(), build_robo_hr()] {
            for l in spec.layers.iter().filter(|l| l.stride == 2) {
                assert!(l.out_ch > l.in_ch);
            }
        }
    }

    #[test]
    fn text_format_round_trip() {
        let spec = build_robo(1).unwrap();
        let parsed = ModelSpec::from_text(&spec.to_text(), "robo", (192, 256)).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn text_format_errors_carry_line_numbers() {
        let text = "# header\nconv 3 2 3 8 bn\nconv 3 x 8 16\n";
        match ModelSpec::from_text(text, "custom", (64, 64)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let narrowing = "conv 3 2 3 8 bn tap=head_hi\nconv 3 2 8 4 bn tap=head_lo\n";
        assert!(matches!(
            ModelSpec::from_text(narrowing, "custom", (64, 64)),
            Err(Error::Spec(_))
        ));
    }
}
