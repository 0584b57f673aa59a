//! Training configuration and its flat `key = value` text form.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | default |
//! |---|---|
//! | `learning_rate` | 1e-4 |
//! | `batch_size` | 32 |
//! | `epochs` | 60 |
//! | `warmup_epochs` | 5 |
//! | `refresh_interval` | 10 |
//! | `temperature` | 0.2 |
//! | `beta` | 1 |
//! | `delta` | 1 |
//! | `augmentation_ratio` | 0.2 |
//! | `augmentation_per_graph` | false |
//! | `hscl`, `adaptive_refresh`, `mixup` | true |
//! | `two_stage` | false |
//! | `head_epochs` | 20 |
//! | `hidden_dim`, `embed_dim` | 64 |
//! | `proj_dim` | 32 |
//! | `layers` | 2 |
//! | `seed` | 0 |

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Cross-entropy only.
    NoHscl,
    /// Subclasses computed once after warm-up and frozen.
    NoAc,
    /// No mixup samples.
    NoSmi,
}

pub const ALL_VARIANTS: [Variant; 4] = [Variant::Full, Variant::NoHscl, Variant::NoAc, Variant::NoSmi];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoHscl => "no-hscl",
            Variant::NoAc => "no-ac",
            Variant::NoSmi => "no-smi",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected full, no-hscl, no-ac or no-smi)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub refresh_interval: usize,
    pub temperature: f64,
    pub beta: f64,
    pub delta: usize,
    pub augmentation_ratio: f64,
    /// Draw the augmentation kind per graph instead of per batch.
    pub augmentation_per_graph: bool,
    pub hscl: bool,
    pub adaptive_refresh: bool,
    pub mixup: bool,
    /// Contrastive-only encoder training, then a classifier fit on the
    /// frozen encoder for `head_epochs`.
    pub two_stage: bool,
    pub head_epochs: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 60,
            warmup_epochs: 5,
            refresh_interval: 10,
            temperature: 0.2,
            beta: 1.0,
            delta: 1,
            augmentation_ratio: 0.2,
            augmentation_per_graph: false,
            hscl: true,
            adaptive_refresh: true,
            mixup: true,
            two_stage: false,
            head_epochs: 20,
            hidden_dim: 64,
            embed_dim: 64,
            proj_dim: 32,
            layers: 2,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    pub fn for_variant(mut self, variant: Variant) -> Self {
        self.hscl = variant != Variant::NoHscl;
        self.adaptive_refresh = variant != Variant::NoAc;
        self.mixup = variant != Variant::NoSmi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.augmentation_ratio > 0.0 && self.augmentation_ratio < 1.0) {
            return fail(format!("augmentation_ratio must lie in (0, 1), got {}", self.augmentation_ratio));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("refresh_interval", self.refresh_interval),
            ("delta", self.delta),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("proj_dim", self.proj_dim),
            ("layers", self.layers),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2".into());
        }
        if self.warmup_epochs >= self.epochs {
            return fail(format!(
                "warmup_epochs ({}) must be smaller than epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.two_stage && (!self.hscl || self.head_epochs == 0) {
            return fail("two_stage needs hscl and a positive head_epochs".into());
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "refresh_interval" => self.refresh_interval = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "augmentation_ratio" => self.augmentation_ratio = parse(key, value)?,
            "augmentation_per_graph" => self.augmentation_per_graph = parse_bool(key, value)?,
            "hscl" => self.hscl = parse_bool(key, value)?,
            "adaptive_refresh" => self.adaptive_refresh = parse_bool(key, value)?,
            "mixup" => self.mixup = parse_bool(key, value)?,
            "two_stage" => self.two_stage = parse_bool(key, value)?,
            "head_epochs" => self.head_epochs = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "proj_dim" => self.proj_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "variant" => *self = self.clone().for_variant(value.parse()?),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by the entries of `text`, then validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    /// Every key, in the documented order; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("refresh_interval", self.refresh_interval.to_string());
        kv("temperature", self.temperature.to_string());
        kv("beta", self.beta.to_string());
        kv("delta", self.delta.to_string());
        kv("augmentation_ratio", self.augmentation_ratio.to_string());
        kv("augmentation_per_graph", self.augmentation_per_graph.to_string());
        kv("hscl", self.hscl.to_string());
        kv("adaptive_refresh", self.adaptive_refresh.to_string());
        kv("mixup", self.mixup.to_string());
        kv("two_stage", self.two_stage.to_string());
        kv("head_epochs", self.head_epochs.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("proj_dim", self.proj_dim.to_string());
        kv("layers", self.layers.to_string());
        kv("seed", self.seed.to_string());
        out
    }
}
