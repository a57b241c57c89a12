//! Run configuration and its line-oriented `section.key = value` text form.

use std::fmt::Write as _;
use std::path::Path;

use crate::decoder::{DecoderConfig, DeconvStage};
use crate::encoder::{ModelConfig, Readout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden: vec![2048, 512], classes: 7, dropout: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub loss: LossKind,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch: 8, steps: 500, loss: LossKind::Mse }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Phase-head training plus the optimizer settings shared by every loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), lr: 3e-4, gamma: 0.95, batch: 128, epochs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub brightness: f64,
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub blur_prob: f64,
    pub blur_sigma_max: f64,
    pub blur_kernel: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            brightness: 0.2,
            contrast: (0.8, 1.25),
            saturation: (0.8, 1.25),
            blur_prob: 0.5,
            blur_sigma_max: 1.5,
            blur_kernel: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { batch: 1, warmup: 3, iters: 20, threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub seed: u64,
    pub encoder: ModelConfig,
    pub decoder: DecoderConfig,
    pub head: HeadConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub bench: BenchConfig,
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_one(key, x)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{v}' for {key} (expected true or false)"))),
    }
}

impl Config {
    /// 64×64 variant for desk-scale runs.
    pub fn small() -> Self {
        Self {
            encoder: ModelConfig::small(),
            decoder: DecoderConfig::small(),
            head: HeadConfig::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.decoder.latent_dim != self.encoder.latent_dim {
            return Err(Error::Config(format!(
                "decoder latent width {} differs from encoder latent width {}",
                self.decoder.latent_dim, self.encoder.latent_dim
            )));
        }
        if self.decoder.resolution != self.encoder.resolution || self.decoder.out_channels != self.encoder.in_channels {
            return Err(Error::Config("decoder output must match the encoder input frame shape".into()));
        }
        if self.head.classes == 0 || self.head.hidden.contains(&0) || !(0.0..1.0).contains(&self.head.dropout) {
            return Err(Error::Config("head widths must be positive and dropout in [0, 1)".into()));
        }
        let a = &self.train.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        for (name, lr) in [("pretrain.lr", self.pretrain.lr), ("finetune.lr", self.finetune.lr), ("train.lr", self.train.lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.train.gamma.is_finite() && self.train.gamma > 0.0) {
            return Err(Error::Config(format!("train.gamma must be positive, got {}", self.train.gamma)));
        }
        for (name, b) in [
            ("pretrain.batch", self.pretrain.batch),
            ("finetune.batch", self.finetune.batch),
            ("train.batch", self.train.batch),
            ("bench.batch", self.bench.batch),
            ("bench.threads", self.bench.threads),
        ] {
            if b == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let g = &self.augment;
        if g.blur_kernel % 2 == 0 || !(0.0..=1.0).contains(&g.blur_prob) || g.contrast.0 > g.contrast.1 || g.saturation.0 > g.saturation.1
        {
            return Err(Error::Config("augment: blur_kernel must be odd, blur_prob in [0, 1], ranges ordered".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let e = &self.encoder;
        let d = &self.decoder;
        let lines: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("encoder.resolution", e.resolution.to_string()),
            ("encoder.in_channels", e.in_channels.to_string()),
            ("encoder.patch_size", e.patch_size.to_string()),
            ("encoder.widths", list(&e.widths)),
            ("encoder.blocks", list(&e.blocks)),
            ("encoder.heads", list(&e.heads)),
            ("encoder.mlps_per_side", e.mlps_per_side.to_string()),
            ("encoder.mlp_ratio", e.mlp_ratio.to_string()),
            ("encoder.realloc", list(&e.realloc)),
            ("encoder.latent_dim", e.latent_dim.to_string()),
            ("encoder.readout", e.readout.as_str().to_string()),
            ("encoder.frozen", e.frozen.to_string()),
            ("decoder.seed_channels", d.seed_channels.to_string()),
            ("decoder.seed_size", d.seed_size.to_string()),
            ("decoder.stages", list(&d.stages)),
            ("decoder.se_scales", list(&d.se_scales)),
            ("decoder.se_ratio", d.se_ratio.to_string()),
            ("decoder.out_channels", d.out_channels.to_string()),
            ("decoder.resolution", d.resolution.to_string()),
            ("head.hidden", list(&self.head.hidden)),
            ("head.classes", self.head.classes.to_string()),
            ("head.dropout", self.head.dropout.to_string()),
            ("pretrain.lr", self.pretrain.lr.to_string()),
            ("pretrain.batch", self.pretrain.batch.to_string()),
            ("pretrain.steps", self.pretrain.steps.to_string()),
            ("pretrain.loss", "mse".to_string()),
            ("finetune.lr", self.finetune.lr.to_string()),
            ("finetune.batch", self.finetune.batch.to_string()),
            ("train.optimizer", "adam".to_string()),
            ("train.beta1", self.train.adam.beta1.to_string()),
            ("train.beta2", self.train.adam.beta2.to_string()),
            ("train.eps", self.train.adam.eps.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.gamma", self.train.gamma.to_string()),
            ("train.batch", self.train.batch.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("augment.enabled", self.augment.enabled.to_string()),
            ("augment.brightness", self.augment.brightness.to_string()),
            ("augment.contrast_min", self.augment.contrast.0.to_string()),
            ("augment.contrast_max", self.augment.contrast.1.to_string()),
            ("augment.saturation_min", self.augment.saturation.0.to_string()),
            ("augment.saturation_max", self.augment.saturation.1.to_string()),
            ("augment.blur_prob", self.augment.blur_prob.to_string()),
            ("augment.blur_sigma_max", self.augment.blur_sigma_max.to_string()),
            ("augment.blur_kernel", self.augment.blur_kernel.to_string()),
            ("bench.batch", self.bench.batch.to_string()),
            ("bench.warmup", self.bench.warmup.to_string()),
            ("bench.iters", self.bench.iters.to_string()),
            ("bench.threads", self.bench.threads.to_string()),
        ];
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        s
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.encoder;
        let d = &mut self.decoder;
        match key {
            "seed" => self.seed = parse_one(key, v)?,
            "encoder.resolution" => e.resolution = parse_one(key, v)?,
            "encoder.in_channels" => e.in_channels = parse_one(key, v)?,
            "encoder.patch_size" => e.patch_size = parse_one(key, v)?,
            "encoder.widths" => e.widths = parse_list(key, v)?,
            "encoder.blocks" => e.blocks = parse_list(key, v)?,
            "encoder.heads" => e.heads = parse_list(key, v)?,
            "encoder.mlps_per_side" => e.mlps_per_side = parse_one(key, v)?,
            "encoder.mlp_ratio" => e.mlp_ratio = parse_one(key, v)?,
            "encoder.realloc" => e.realloc = parse_list(key, v)?,
            "encoder.latent_dim" => e.latent_dim = parse_one(key, v)?,
            "encoder.readout" => e.readout = Readout::parse(v.trim())?,
            "encoder.frozen" => e.frozen = parse_bool(key, v)?,
            "decoder.seed_channels" => d.seed_channels = parse_one(key, v)?,
            "decoder.seed_size" => d.seed_size = parse_one(key, v)?,
            "decoder.stages" => d.stages = v.split(',').map(DeconvStage::parse).collect::<Result<_>>()?,
            "decoder.se_scales" => d.se_scales = parse_list(key, v)?,
            "decoder.se_ratio" => d.se_ratio = parse_one(key, v)?,
            "decoder.out_channels" => d.out_channels = parse_one(key, v)?,
            "decoder.resolution" => d.resolution = parse_one(key, v)?,
            "head.hidden" => self.head.hidden = parse_list(key, v)?,
            "head.classes" => self.head.classes = parse_one(key, v)?,
            "head.dropout" => self.head.dropout = parse_one(key, v)?,
            "pretrain.lr" => self.pretrain.lr = parse_one(key, v)?,
            "pretrain.batch" => self.pretrain.batch = parse_one(key, v)?,
            "pretrain.steps" => self.pretrain.steps = parse_one(key, v)?,
            "pretrain.loss" => match v.trim() {
                "mse" => self.pretrain.loss = LossKind::Mse,
                other => return Err(Error::Config(format!("unsupported loss '{other}' (supported: mse)"))),
            },
            "finetune.lr" => self.finetune.lr = parse_one(key, v)?,
            "finetune.batch" => self.finetune.batch = parse_one(key, v)?,
            "train.optimizer" => {
                if v.trim() != "adam" {
                    return Err(Error::Config(format!("unsupported optimizer '{}' (supported: adam)", v.trim())));
                }
            }
            "train.beta1" => self.train.adam.beta1 = parse_one(key, v)?,
            "train.beta2" => self.train.adam.beta2 = parse_one(key, v)?,
            "train.eps" => self.train.adam.eps = parse_one(key, v)?,
            "train.lr" => self.train.lr = parse_one(key, v)?,
            "train.gamma" => self.train.gamma = parse_one(key, v)?,
            "train.batch" => self.train.batch = parse_one(key, v)?,
            "train.epochs" => self.train.epochs = parse_one(key, v)?,
            "augment.enabled" => self.augment.enabled = parse_bool(key, v)?,
            "augment.brightness" => self.augment.brightness = parse_one(key, v)?,
            "augment.contrast_min" => self.augment.contrast.0 = parse_one(key, v)?,
            "augment.contrast_max" => self.augment.contrast.1 = parse_one(key, v)?,
            "augment.saturation_min" => self.augment.saturation.0 = parse_one(key, v)?,
            "augment.saturation_max" => self.augment.saturation.1 = parse_one(key, v)?,
            "augment.blur_prob" => self.augment.blur_prob = parse_one(key, v)?,
            "augment.blur_sigma_max" => self.augment.blur_sigma_max = parse_one(key, v)?,
            "augment.blur_kernel" => self.augment.blur_kernel = parse_one(key, v)?,
            "bench.batch" => self.bench.batch = parse_one(key, v)?,
            "bench.warmup" => self.bench.warmup = parse_one(key, v)?,
            "bench.iters" => self.bench.iters = parse_one(key, v)?,
            "bench.threads" => self.bench.threads = parse_one(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the defaults. A leading
    /// `preset = small` line selects the 64×64 defaults instead.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen_other = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
            let k = k.trim();
            if k == "preset" {
                if seen_other {
                    return Err(Error::Config(format!("line {}: preset must precede other keys", i + 1)));
                }
                cfg = match v.trim() {
                    "default" => Config::default(),
                    "small" => Config::small(),
                    other => return Err(Error::Config(format!("unknown preset '{other}'"))),
                };
                continue;
            }
            seen_other = true;
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        cfg.decoder.latent_dim = cfg.encoder.latent_dim;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [Config::default(), Config::small()] {
            let back = Config::parse(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = Config::parse("# header\npreset = small\ntrain.lr = 3e-4 # inline\ndecoder.se_scales = 16,32\nseed=9\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.encoder.resolution, 64);
        assert_eq!(cfg.train.lr, 3e-4);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(Config::parse("encoder.bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("train.lr"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("train.optimizer = sgd"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("seed = 1\npreset = small"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("bench.batch = 0"), Err(Error::Config(_))));
    }
}
