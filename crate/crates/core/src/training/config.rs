use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl OptimizerKind {
    fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Training hyperparameters. Read from line-based `key = value` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient L2 norm limit.
    pub clip_norm: f64,
    pub seed: u64,
    /// Updates between validations (and checkpoints).
    pub valid_interval: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    /// Stop after this many updates; `None` means unlimited.
    pub max_updates: Option<usize>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Held-out share of the training pairs when no dev set is given.
    pub valid_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            clip_norm: 1.0,
            seed: 1,
            valid_interval: 100,
            patience: 5,
            max_updates: None,
            embed_dim: 64,
            hidden_dim: 128,
            valid_fraction: 0.05,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("valid_interval", self.valid_interval),
            ("patience", self.patience),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        // A zero learning rate is allowed: it freezes the parameters.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be a finite value >= 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("valid_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Overlays `key = value` lines onto the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "valid_interval" => self.valid_interval = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "max_updates" => {
                self.max_updates = match value {
                    "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "valid_fraction" => self.valid_fraction = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical `key = value` rendering; `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(out, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(out, "optimizer = {}", self.optimizer.as_str());
        let _ = writeln!(out, "clip_norm = {:?}", self.clip_norm);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "valid_interval = {}", self.valid_interval);
        let _ = writeln!(out, "patience = {}", self.patience);
        match self.max_updates {
            Some(n) => {
                let _ = writeln!(out, "max_updates = {n}");
            }
            None => {
                let _ = writeln!(out, "max_updates = none");
            }
        }
        let _ = writeln!(out, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(out, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(out, "valid_fraction = {:?}", self.valid_fraction);
        out
    }

    /// SHA-256 of the canonical rendering.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
