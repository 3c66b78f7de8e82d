use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Mask, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPruning {
    /// 1-based layer index; heads follow the backbone.
    pub index: usize,
    pub total: usize,
    pub pruned: usize,
    pub all_zero: bool,
}

impl LayerPruning {
    pub fn fraction(&self) -> f64 {
        self.pruned as f64 / self.total.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub threshold: f32,
    pub layers: Vec<LayerPruning>,
}

impl PruneReport {
    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.total).sum()
    }

    pub fn pruned(&self) -> usize {
        self.layers.iter().map(|l| l.pruned).sum()
    }

    pub fn fraction(&self) -> f64 {
        self.pruned() as f64 / self.total().max(1) as f64
    }
}

impl fmt::Display for PruneReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>9} {:>9} {:>8}", "layer", "weights", "pruned", "sparsity")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:>5} {:>9} {:>9} {:>7.2}%{}",
                l.index,
                l.total,
                l.pruned,
                100.0 * l.fraction(),
                if l.all_zero { " (all zero)" } else { "" }
            )?;
        }
        write!(
            f,
            "{:>5} {:>9} {:>9} {:>7.2}%",
            "all",
            self.total(),
            self.pruned(),
            100.0 * self.fraction()
        )
    }
}

/// Masks every weight with `|w| < θ · max|w|` within its layer and zeroes it.
/// Existing masks are kept; heads are pruned like any other layer.
pub fn prune(net: &mut Network, threshold: f32) -> Result<PruneReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!(
            "prune threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let w = layer.conv.weights.data();
        let max = w.iter().fold(0.0f32, |m, x| m.max(x.abs()));
        let cut = threshold * max;
        let all_zero = max == 0.0;
        if all_zero {
            log::warn!("layer {} has only zero weights; masking it entirely", i + 1);
        }
        let keep: Vec<bool> = w
            .iter()
            .zip(layer.mask.keep_flags())
            .map(|(x, &k)| k && !all_zero && x.abs() >= cut)
            .collect();
        layer.mask = Mask::from_keep(keep);
        layer.apply_mask();
        layers.push(LayerPruning {
            index: i + 1,
            total: layer.mask.len(),
            pruned: layer.mask.pruned(),
            all_zero,
        });
    }
    Ok(PruneReport { threshold, layers })
}

/// Fraction of conv weights with `|w| < θ · max|w|` per layer, over the network.
pub fn prunable_fraction(net: &Network, threshold: f32) -> f64 {
    let (mut below, mut total) = (0usize, 0usize);
    for layer in &net.layers {
        let w = layer.conv.weights.data();
        let max = w.iter().fold(0.0f32, |m, x| m.max(x.abs()));
        below += w.iter().filter(|x| x.abs() < threshold * max || max == 0.0).count();
        total += w.len();
    }
    below as f64 / total.max(1) as f64
}
