use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::LossWeights;
use crate::error::{Error, Result};

/// Hyper-parameters for training, pruning and transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_max: f32,
    pub lr_min: f32,
    pub epochs: usize,
    pub batch: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub prune_threshold: f32,
    pub seed: u64,
    pub transfer_layers: Option<usize>,
    pub transfer_lr_factor: f32,
    pub augment: bool,
    /// Validation mAP is computed every this many epochs (0 disables it).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 1e-3,
            lr_min: 5e-5,
            epochs: 125,
            batch: 64,
            finetune_epochs: 10,
            finetune_lr: 5e-5,
            prune_threshold: 0.01,
            seed: 0,
            transfer_layers: None,
            transfer_lr_factor: 10.0,
            augment: true,
            val_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 < lr_min <= lr_max, got lr_min={} lr_max={}",
                self.lr_min, self.lr_max
            ));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.finetune_lr > 0.0 && self.finetune_lr.is_finite()) {
            return bad(format!("finetune_lr must be positive, got {}", self.finetune_lr));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return bad(format!(
                "prune_threshold must lie in (0, 1), got {}",
                self.prune_threshold
            ));
        }
        if !(self.transfer_lr_factor >= 1.0 && self.transfer_lr_factor.is_finite()) {
            return bad(format!(
                "transfer_lr_factor must be >= 1, got {}",
                self.transfer_lr_factor
            ));
        }
        Ok(())
    }
}

/// Sets one `key = value` pair on the config or the loss weights.
pub fn set_config_value(cfg: &mut TrainConfig, lw: &mut LossWeights, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Validation(format!("`{key}` has invalid value `{v}`")))
    }
    match key {
        "lr_max" => cfg.lr_max = num(key, value)?,
        "lr_min" => cfg.lr_min = num(key, value)?,
        "epochs" => cfg.epochs = num(key, value)?,
        "batch" => cfg.batch = num(key, value)?,
        "finetune_epochs" => cfg.finetune_epochs = num(key, value)?,
        "finetune_lr" => cfg.finetune_lr = num(key, value)?,
        "prune_threshold" => cfg.prune_threshold = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "transfer_layers" => {
            cfg.transfer_layers = match value {
                "none" | "" => None,
                v => Some(num(key, v)?),
            }
        }
        "transfer_lr_factor" => cfg.transfer_lr_factor = num(key, value)?,
        "augment" => cfg.augment = num(key, value)?,
        "val_every" => cfg.val_every = num(key, value)?,
        "lambda_coord" => lw.coord = num(key, value)?,
        "lambda_obj" => lw.obj = num(key, value)?,
        "lambda_noobj" => lw.noobj = num(key, value)?,
        "lambda_l1" => lw.l1 = num(key, value)?,
        other => return Err(Error::Validation(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

/// Parses flat `key = value` lines; `#` starts a comment. Unset keys keep
/// their defaults.
pub fn parse_config(text: &str, source: &str) -> Result<(TrainConfig, LossWeights)> {
    let mut cfg = TrainConfig::default();
    let mut lw = LossWeights::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        set_config_value(&mut cfg, &mut lw, key.trim(), value.trim()).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
    }
    Ok((cfg, lw))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<(TrainConfig, LossWeights)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn format_config(cfg: &TrainConfig, lw: &LossWeights) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("lr_max", cfg.lr_max.to_string());
    kv("lr_min", cfg.lr_min.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("batch", cfg.batch.to_string());
    kv("finetune_epochs", cfg.finetune_epochs.to_string());
    kv("finetune_lr", cfg.finetune_lr.to_string());
    kv("prune_threshold", cfg.prune_threshold.to_string());
    kv("seed", cfg.seed.to_string());
    kv(
        "transfer_layers",
        cfg.transfer_layers.map_or("none".into(), |k| k.to_string()),
    );
    kv("transfer_lr_factor", cfg.transfer_lr_factor.to_string());
    kv("augment", cfg.augment.to_string());
    kv("val_every", cfg.val_every.to_string());
    kv("lambda_coord", lw.coord.to_string());
    kv("lambda_obj", lw.obj.to_string());
    kv("lambda_noobj", lw.noobj.to_string());
    kv("lambda_l1", lw.l1.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_schedule() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_max, c.lr_min), (1e-3, 5e-5));
        assert_eq!((c.epochs, c.batch, c.finetune_epochs), (125, 64, 10));
        assert_eq!((c.finetune_lr, c.prune_threshold, c.transfer_lr_factor), (5e-5, 0.01, 10.0));
        c.validate().unwrap();
    }

    #[test]
    fn round_trip_and_comments() {
        let mut cfg = TrainConfig::default();
        let mut lw = LossWeights::default();
        cfg.epochs = 7;
        cfg.transfer_layers = Some(5);
        lw.l1 = 1e-4;
        let text = format!("# header\n{}", format_config(&cfg, &lw));
        assert_eq!(parse_config(&text, "c").unwrap(), (cfg, lw));
        let (c, _) = parse_config("epochs = 3 # short\n\n", "c").unwrap();
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn errors_name_the_line() {
        match parse_config("epochs = 3\nbatch = lots\n", "c") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_config("colour = red", "c").is_err());
        assert!(parse_config("no equals sign", "c").is_err());
    }
}
