//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Keys are the long CLI flag names (`batch-size`, `top-n`, ...). Later
//! assignments win. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use crate::data::{DatabaseMode, SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{EvalOptions, TopN};
use crate::model::Architecture;
use crate::objective::{LossConfig, LossMode};
use crate::trainer::{AdamConfig, TrainConfig};

/// Hyperparameter given either absolutely or per code bit (`5/q`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BitScaled {
    Absolute(f64),
    PerBit(f64),
}

impl BitScaled {
    pub fn resolve(self, bits: usize) -> f64 {
        match self {
            BitScaled::Absolute(v) => v,
            BitScaled::PerBit(v) => v / bits as f64,
        }
    }
}

impl std::str::FromStr for BitScaled {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("bad number '{t}'")))
        };
        match s.strip_suffix("/q") {
            Some(head) => Ok(BitScaled::PerBit(num(head)?)),
            None => Ok(BitScaled::Absolute(num(s)?)),
        }
    }
}

impl std::fmt::Display for BitScaled {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BitScaled::Absolute(v) => write!(f, "{v}"),
            BitScaled::PerBit(v) => write!(f, "{v}/q"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,

    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub codes: Option<PathBuf>,

    pub bits: usize,
    pub hidden: Vec<usize>,
    pub alpha: BitScaled,
    pub gamma: BitScaled,
    pub lambda: BitScaled,
    pub loss: LossMode,

    pub batch_size: usize,
    pub lr: f64,
    pub decay_every: usize,
    pub decay_rate: f64,
    pub iterations: usize,
    pub adam: AdamConfig,

    pub query_size: Option<usize>,
    pub train_size: Option<usize>,
    pub database: DatabaseMode,
    pub self_match: bool,
    pub top_n: Vec<TopN>,

    pub query_ids: Vec<usize>,
    pub query_top: Option<usize>,

    pub sweep_alpha: Vec<BitScaled>,
    pub sweep_gamma: Vec<BitScaled>,
    pub sweep_lambda: Vec<BitScaled>,

    pub num_items: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub label_density: f64,
    pub noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            features: None,
            labels: None,
            out_dir: PathBuf::from("."),
            checkpoint: None,
            codes: None,
            bits: 48,
            hidden: vec![512],
            alpha: BitScaled::PerBit(5.0),
            gamma: BitScaled::PerBit(0.1),
            lambda: BitScaled::Absolute(0.1),
            loss: LossMode::Joint,
            batch_size: 128,
            lr: 1e-3,
            decay_every: 500,
            decay_rate: 0.5,
            iterations: 1000,
            adam: AdamConfig::default(),
            query_size: None,
            train_size: None,
            database: DatabaseMode::Remainder,
            self_match: false,
            top_n: vec![TopN::All],
            query_ids: Vec::new(),
            query_top: None,
            sweep_alpha: Vec::new(),
            sweep_gamma: Vec::new(),
            sweep_lambda: Vec::new(),
            num_items: 2000,
            num_classes: 8,
            feature_dim: 32,
            label_density: 0.1,
            noise: 1.0,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<V: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    let v = value.trim();
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| parse(key, item)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

fn parse_bit_scaled(key: &str, value: &str) -> Result<BitScaled> {
    value
        .parse::<BitScaled>()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bit_scaled_list(key: &str, value: &str) -> Result<Vec<BitScaled>> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| parse_bit_scaled(key, item)).collect()
}

impl RunConfig {
    /// Applies one assignment; `key` is a long flag name without dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "features" => self.features = Some(PathBuf::from(value.trim())),
            "labels" => self.labels = Some(PathBuf::from(value.trim())),
            "out-dir" => self.out_dir = PathBuf::from(value.trim()),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value.trim())),
            "codes" => self.codes = Some(PathBuf::from(value.trim())),
            "bits" => self.bits = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "alpha" => self.alpha = parse_bit_scaled(key, value)?,
            "gamma" => self.gamma = parse_bit_scaled(key, value)?,
            "lambda" => self.lambda = parse_bit_scaled(key, value)?,
            "loss" => self.loss = value.trim().parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "batch-size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "decay-every" => self.decay_every = parse(key, value)?,
            "decay-rate" => self.decay_rate = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "adam-beta1" => self.adam.beta1 = parse(key, value)?,
            "adam-beta2" => self.adam.beta2 = parse(key, value)?,
            "adam-epsilon" => self.adam.epsilon = parse(key, value)?,
            "query-size" => self.query_size = Some(parse(key, value)?),
            "train-size" => self.train_size = Some(parse(key, value)?),
            "database" => self.database = value.trim().parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "self-match" => self.self_match = parse_bool(key, value)?,
            "top-n" => self.top_n = parse_list(key, value)?,
            "query-ids" => self.query_ids = parse_list(key, value)?,
            "query-top" => self.query_top = Some(parse(key, value)?),
            "sweep-alpha" => self.sweep_alpha = parse_bit_scaled_list(key, value)?,
            "sweep-gamma" => self.sweep_gamma = parse_bit_scaled_list(key, value)?,
            "sweep-lambda" => self.sweep_lambda = parse_bit_scaled_list(key, value)?,
            "num-items" => self.num_items = parse(key, value)?,
            "num-classes" => self.num_classes = parse(key, value)?,
            "feature-dim" => self.feature_dim = parse(key, value)?,
            "label-density" => self.label_density = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file's text.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected key = value", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{source}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Checks every field that any command relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bits == 0 {
            return bad("bits must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.top_n.is_empty() {
            return bad("top-n needs at least one cutoff".into());
        }
        self.loss_config(self.bits)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for (name, list) in [("sweep-alpha", &self.sweep_alpha), ("sweep-gamma", &self.sweep_gamma), ("sweep-lambda", &self.sweep_lambda)] {
            for v in list {
                let r = v.resolve(self.bits);
                if !(r >= 0.0) || (name == "sweep-alpha" && r <= 0.0) {
                    return bad(format!("{name} value {v} out of range"));
                }
            }
        }
        if !(self.label_density > 0.0 && self.label_density < 1.0) {
            return bad(format!("label-density must be in (0, 1), got {}", self.label_density));
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.num_classes < 2 || self.feature_dim == 0 || self.num_items == 0 {
            return bad("num-classes must be >= 2 and num-items, feature-dim positive".into());
        }
        Ok(())
    }

    pub fn loss_config(&self, bits: usize) -> LossConfig<f64> {
        LossConfig {
            bits,
            alpha: self.alpha.resolve(bits),
            gamma: self.gamma.resolve(bits),
            lambda: self.lambda.resolve(bits),
            mode: self.loss,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            base_lr: self.lr,
            decay_every: self.decay_every,
            decay_rate: self.decay_rate,
            max_iterations: self.iterations,
            seed: self.seed,
            adam: self.adam,
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            code_bits: self.bits,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            query: self.query_size,
            train: self.train_size,
            database: self.database,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            cutoffs: self.top_n.clone(),
            self_match: self.self_match,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_items: self.num_items,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            label_density: self.label_density,
            noise: self.noise,
            seed: self.seed,
        }
    }

    pub fn features_path(&self) -> PathBuf {
        self.features.clone().unwrap_or_else(|| self.out_dir.join("features.shft"))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.out_dir.join("labels.shlb"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.shmd"))
    }

    pub fn codes_path(&self) -> PathBuf {
        self.codes.clone().unwrap_or_else(|| self.out_dir.join("codes.shcd"))
    }
}
