//! Run configuration as plain `key=value` text.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lcm::ChannelLift;
use crate::metrics::Protocol;
use crate::optim::SgdConfig;
use crate::rnet::RectNetConfig;
use crate::snet::SegNetConfig;

/// Everything that influences a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub seg: SegNetConfig,
    /// Categories and resolution are taken from the corpus.
    pub rect: RectNetConfig,
    pub sgd: SgdConfig,
    pub batch_size: usize,
    pub seg_epochs: usize,
    pub rect_epochs: usize,
    pub retrain_epochs: usize,
    /// Flip and scale augmentation for S-Net training.
    pub augment: bool,
    /// Feed R-Net one-hot pseudo-labels instead of S-Net probabilities.
    pub hard_masks: bool,
    pub rounds: usize,
    /// Retrain from S' weights instead of a fresh initialization.
    pub warm_start: bool,
    /// Also retrain on unrectified pseudo-labels for comparison.
    pub ablate_raw: bool,
    pub protocol: Protocol,
    /// Inference workers; results do not depend on it.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seg: SegNetConfig::default(),
            rect: RectNetConfig::default(),
            sgd: SgdConfig::PRESET,
            batch_size: 4,
            seg_epochs: 40,
            rect_epochs: 40,
            retrain_epochs: 40,
            augment: true,
            hard_masks: false,
            rounds: 1,
            warm_start: false,
            ablate_raw: false,
            protocol: Protocol::Lip,
            threads: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}, expected true or false"))),
    }
}

impl PipelineConfig {
    /// Every recognised key, in the order [`to_text`](Self::to_text) writes them.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "categories",
        "seg_hidden",
        "seg_features",
        "rect_hidden",
        "rect_features",
        "node_dim",
        "high_nodes",
        "alpha",
        "lift",
        "rescale_by_c",
        "two_pass_assist",
        "mask_skip_gain",
        "lr",
        "momentum",
        "weight_decay",
        "power",
        "batch_size",
        "seg_epochs",
        "rect_epochs",
        "retrain_epochs",
        "augment",
        "hard_masks",
        "rounds",
        "warm_start",
        "ablate_raw",
        "protocol",
        "threads",
    ];

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "seed" => self.seed.to_string(),
            "categories" => self.seg.categories.to_string(),
            "seg_hidden" => self.seg.hidden.to_string(),
            "seg_features" => self.seg.features.to_string(),
            "rect_hidden" => self.rect.hidden.to_string(),
            "rect_features" => self.rect.features.to_string(),
            "node_dim" => self.rect.node_dim.to_string(),
            "high_nodes" => self.rect.high_nodes.to_string(),
            "alpha" => self.rect.alpha.to_string(),
            "lift" => match self.rect.lift {
                ChannelLift::Projection => "projection".into(),
                ChannelLift::Identity => "identity".into(),
            },
            "rescale_by_c" => self.rect.rescale_by_c.to_string(),
            "two_pass_assist" => self.rect.two_pass_assist.to_string(),
            "mask_skip_gain" => self.rect.mask_skip_gain.to_string(),
            "lr" => self.sgd.base_lr.to_string(),
            "momentum" => self.sgd.momentum.to_string(),
            "weight_decay" => self.sgd.weight_decay.to_string(),
            "power" => self.sgd.power.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seg_epochs" => self.seg_epochs.to_string(),
            "rect_epochs" => self.rect_epochs.to_string(),
            "retrain_epochs" => self.retrain_epochs.to_string(),
            "augment" => self.augment.to_string(),
            "hard_masks" => self.hard_masks.to_string(),
            "rounds" => self.rounds.to_string(),
            "warm_start" => self.warm_start.to_string(),
            "ablate_raw" => self.ablate_raw.to_string(),
            "protocol" => match self.protocol {
                Protocol::Lip => "lip".into(),
                Protocol::Atr => "atr".into(),
            },
            "threads" => self.threads.to_string(),
            _ => return None,
        };
        Some(v)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "categories" => {
                self.seg.categories = parse(key, value)?;
                self.rect.categories = self.seg.categories;
            }
            "seg_hidden" => self.seg.hidden = parse(key, value)?,
            "seg_features" => self.seg.features = parse(key, value)?,
            "rect_hidden" => self.rect.hidden = parse(key, value)?,
            "rect_features" => self.rect.features = parse(key, value)?,
            "node_dim" => self.rect.node_dim = parse(key, value)?,
            "high_nodes" => self.rect.high_nodes = parse(key, value)?,
            "alpha" => self.rect.alpha = parse(key, value)?,
            "lift" => {
                self.rect.lift = match value.trim() {
                    "projection" => ChannelLift::Projection,
                    "identity" => ChannelLift::Identity,
                    _ => return Err(Error::Config(format!("invalid lift {value:?}, expected projection or identity"))),
                }
            }
            "rescale_by_c" => self.rect.rescale_by_c = parse_bool(key, value)?,
            "two_pass_assist" => self.rect.two_pass_assist = parse_bool(key, value)?,
            "mask_skip_gain" => self.rect.mask_skip_gain = parse(key, value)?,
            "lr" => self.sgd.base_lr = parse(key, value)?,
            "momentum" => self.sgd.momentum = parse(key, value)?,
            "weight_decay" => self.sgd.weight_decay = parse(key, value)?,
            "power" => self.sgd.power = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seg_epochs" => self.seg_epochs = parse(key, value)?,
            "rect_epochs" => self.rect_epochs = parse(key, value)?,
            "retrain_epochs" => self.retrain_epochs = parse(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "hard_masks" => self.hard_masks = parse_bool(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "warm_start" => self.warm_start = parse_bool(key, value)?,
            "ablate_raw" => self.ablate_raw = parse_bool(key, value)?,
            "protocol" => {
                self.protocol = match value.trim() {
                    "lip" => Protocol::Lip,
                    "atr" => Protocol::Atr,
                    _ => return Err(Error::Config(format!("invalid protocol {value:?}, expected lip or atr"))),
                }
            }
            "threads" => self.threads = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// One `key=value` line per entry of [`KEYS`](Self::KEYS).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            writeln!(out, "{k}={}", self.get(k).expect("every key has a value")).expect("writing to a String");
        }
        out
    }

    /// Applies `key=value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.seg.categories != self.rect.categories {
            return Err(Error::Config("S-Net and R-Net category counts differ".into()));
        }
        let probe = RectNetConfig { height: 16, width: 16, ..self.rect };
        probe.validate()?;
        crate::optim::SgdState::<f64>::new(self.sgd, 1)?;
        Ok(())
    }
}
