//! Experiment configuration.
//!
//! The file format is one `key = value` pair per line; `#` starts a comment
//! and blank lines are ignored. Unknown or repeated keys are rejected.
//! Every key has a default, so an empty file is a valid configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::loss::LossFn;
use crate::model::Activation;
use crate::optim::AdamConfig;
use crate::select::StrategyConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Xor {
        noise_std: f64,
    },
    Blobs {
        dim: usize,
        separation: f64,
    },
    Csv {
        train: PathBuf,
        dev: PathBuf,
        task: TaskKind,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub name: String,
    pub strategy: StrategyConfig,
    /// Forward passes per step.
    pub k: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub adam: AdamConfig,
    pub keep_prob: f64,
    pub seeds: Vec<u64>,
    /// Train with `2 × batch_size` examples per step (the vanilla control).
    pub doubled_batch: bool,
    pub loss: LossFn,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dataset: DatasetSource,
    pub train_size: usize,
    pub dev_size: usize,
    pub data_seed: u64,
    pub label_noise: f64,
    pub imbalance: f64,
    pub minority_class: usize,
    /// Train-split subsample size; 0 keeps every row.
    pub subsample: usize,
    /// Dev evaluation interval in steps; 0 evaluates only at the end.
    pub eval_every: u64,
    /// Mask dump interval in steps; 0 disables dumps.
    pub dump_masks_every: u64,
    pub save_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            name: "experiment".into(),
            strategy: StrategyConfig::default(),
            k: 2,
            batch_size: 32,
            steps: 500,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            keep_prob: 0.9,
            seeds: (0..10).collect(),
            doubled_batch: false,
            loss: LossFn::SoftmaxCrossEntropy,
            hidden: vec![32, 32],
            activation: Activation::Relu,
            dataset: DatasetSource::Xor { noise_std: 0.5 },
            train_size: 1000,
            dev_size: 1000,
            data_seed: 0,
            label_noise: 0.0,
            imbalance: 0.0,
            minority_class: 1,
            subsample: 0,
            eval_every: 100,
            dump_masks_every: 0,
            save_checkpoints: false,
        }
    }
}

const KEYS: &[&str] = &[
    "name",
    "strategy",
    "p",
    "eps_den",
    "fisher_window",
    "k",
    "batch_size",
    "steps",
    "lr",
    "beta1",
    "beta2",
    "eps_adam",
    "keep_prob",
    "seeds",
    "doubled_batch",
    "loss",
    "hidden",
    "activation",
    "dataset",
    "noise_std",
    "dim",
    "separation",
    "train_path",
    "dev_path",
    "task",
    "train_size",
    "dev_size",
    "data_seed",
    "label_noise",
    "imbalance",
    "minority_class",
    "subsample",
    "eval_every",
    "dump_masks_every",
    "save_checkpoints",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true/false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| parse_value(key, s.trim())).collect()
}

/// `0..=9`, `0..10` or `0,1,2`.
fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..=") {
        let (a, b): (u64, u64) = (parse_value("seeds", a.trim())?, parse_value("seeds", b.trim())?);
        return Ok((a..=b).collect());
    }
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse_value("seeds", a.trim())?, parse_value("seeds", b.trim())?);
        return Ok((a..b).collect());
    }
    parse_list("seeds", value)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::UnknownConfigKey(key.to_string()));
            }
            if pairs.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        let mut cfg = TrainConfig::default();
        for (key, value) in &pairs {
            cfg.set(key, value)?;
        }
        // Dataset fields depend on `dataset`, so resolve them after the loop.
        cfg.dataset = match pairs.get("dataset").map(String::as_str).unwrap_or("xor") {
            "xor" => DatasetSource::Xor {
                noise_std: pairs
                    .get("noise_std")
                    .map_or(Ok(0.5), |v| parse_value("noise_std", v))?,
            },
            "blobs" => DatasetSource::Blobs {
                dim: pairs.get("dim").map_or(Ok(2), |v| parse_value("dim", v))?,
                separation: pairs
                    .get("separation")
                    .map_or(Ok(2.0), |v| parse_value("separation", v))?,
            },
            "csv" => {
                let path = |k: &str| {
                    pairs
                        .get(k)
                        .map(PathBuf::from)
                        .ok_or_else(|| Error::Config(format!("dataset = csv requires `{k}`")))
                };
                let task = match pairs.get("task").map(String::as_str).unwrap_or("classification") {
                    "classification" => TaskKind::Classification,
                    "regression" => TaskKind::Regression,
                    t => return Err(Error::Config(format!("`task`: unknown task `{t}`"))),
                };
                DatasetSource::Csv {
                    train: path("train_path")?,
                    dev: path("dev_path")?,
                    task,
                }
            }
            d => return Err(Error::Config(format!("`dataset`: unknown dataset `{d}`"))),
        };
        let used_by_dataset: &[&str] = match cfg.dataset {
            DatasetSource::Xor { .. } => &["noise_std"],
            DatasetSource::Blobs { .. } => &["dim", "separation"],
            DatasetSource::Csv { .. } => &["train_path", "dev_path", "task"],
        };
        for k in ["noise_std", "dim", "separation", "train_path", "dev_path", "task"] {
            if pairs.contains_key(k) && !used_by_dataset.contains(&k) {
                return Err(Error::Config(format!("`{k}` does not apply to this dataset")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => self.name = value.to_string(),
            "strategy" => self.strategy.kind = value.parse()?,
            "p" => self.strategy.p = parse_value(key, value)?,
            "eps_den" => self.strategy.eps_den = parse_value(key, value)?,
            "fisher_window" => self.strategy.fisher_window = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "lr" => self.adam.lr = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "eps_adam" => self.adam.eps = parse_value(key, value)?,
            "keep_prob" => self.keep_prob = parse_value(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "doubled_batch" => self.doubled_batch = parse_bool(key, value)?,
            "loss" => {
                self.loss = match value {
                    "cross-entropy" => LossFn::SoftmaxCrossEntropy,
                    "mse" => LossFn::MeanSquaredError,
                    _ => return Err(Error::Config(format!("`loss`: unknown loss `{value}`"))),
                }
            }
            "hidden" => self.hidden = parse_list(key, value)?,
            "activation" => {
                self.activation = match value {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    "identity" => Activation::Identity,
                    _ => return Err(Error::Config(format!("`activation`: unknown activation `{value}`"))),
                }
            }
            "train_size" => self.train_size = parse_value(key, value)?,
            "dev_size" => self.dev_size = parse_value(key, value)?,
            "data_seed" => self.data_seed = parse_value(key, value)?,
            "label_noise" => self.label_noise = parse_value(key, value)?,
            "imbalance" => self.imbalance = parse_value(key, value)?,
            "minority_class" => self.minority_class = parse_value(key, value)?,
            "subsample" => self.subsample = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "dump_masks_every" => self.dump_masks_every = parse_value(key, value)?,
            "save_checkpoints" => self.save_checkpoints = parse_bool(key, value)?,
            // Dataset keys are resolved together in `parse`.
            "dataset" | "noise_std" | "dim" | "separation" | "train_path" | "dev_path" | "task" => {}
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.strategy.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.adam.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.k == 0 {
            return bad("`k` must be >= 1".into());
        }
        if self.batch_size == 0 || self.steps == 0 {
            return bad("`batch_size` and `steps` must be positive".into());
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("`keep_prob` must be in (0, 1], got {}", self.keep_prob));
        }
        if self.seeds.is_empty() {
            return bad("`seeds` must list at least one seed".into());
        }
        if self.hidden.contains(&0) {
            return bad("`hidden` widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("`label_noise` must be in [0, 1], got {}", self.label_noise));
        }
        if !(0.0..1.0).contains(&self.imbalance) {
            return bad(format!("`imbalance` must be in [0, 1), got {}", self.imbalance));
        }
        if !matches!(self.dataset, DatasetSource::Csv { .. }) && self.loss != LossFn::SoftmaxCrossEntropy {
            return bad("synthetic datasets are classification tasks and need `loss = cross-entropy`".into());
        }
        match &self.dataset {
            DatasetSource::Xor { noise_std } => {
                if !self.train_size.is_multiple_of(4)
                    || !self.dev_size.is_multiple_of(4)
                    || self.train_size == 0
                    || self.dev_size == 0
                {
                    return bad("xor sizes must be positive multiples of 4".into());
                }
                if noise_std.is_nan() || *noise_std < 0.0 {
                    return bad("`noise_std` must be >= 0".into());
                }
            }
            DatasetSource::Blobs { dim, separation } => {
                if !self.train_size.is_multiple_of(2)
                    || !self.dev_size.is_multiple_of(2)
                    || self.train_size == 0
                    || self.dev_size == 0
                {
                    return bad("blob sizes must be positive and even".into());
                }
                if *dim == 0 || separation.is_nan() || *separation <= 0.0 {
                    return bad("blobs need `dim` >= 1 and `separation` > 0".into());
                }
            }
            DatasetSource::Csv { task, .. } => {
                let expected = match task {
                    TaskKind::Classification => LossFn::SoftmaxCrossEntropy,
                    TaskKind::Regression => LossFn::MeanSquaredError,
                };
                if self.loss != expected {
                    return bad("`loss` does not match the csv `task`".into());
                }
            }
        }
        Ok(())
    }

    /// Flags worth surfacing in a report.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.strategy.kind.is_bidrop() && self.k == 1 {
            w.push("k=1 with a bidrop strategy: perturbation factor degenerates to |mu|/eps_den".into());
        }
        w
    }

    pub fn effective_batch(&self) -> usize {
        if self.doubled_batch {
            self.batch_size * 2
        } else {
            self.batch_size
        }
    }

    /// Every key with its canonical value, sorted by key.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("name", self.name.clone());
        put("strategy", self.strategy.kind.to_string());
        put("p", self.strategy.p.to_string());
        put("eps_den", self.strategy.eps_den.to_string());
        put("fisher_window", self.strategy.fisher_window.to_string());
        put("k", self.k.to_string());
        put("batch_size", self.batch_size.to_string());
        put("steps", self.steps.to_string());
        put("lr", self.adam.lr.to_string());
        put("beta1", self.adam.beta1.to_string());
        put("beta2", self.adam.beta2.to_string());
        put("eps_adam", self.adam.eps.to_string());
        put("keep_prob", self.keep_prob.to_string());
        put("seeds", join(&self.seeds));
        put("doubled_batch", self.doubled_batch.to_string());
        put(
            "loss",
            match self.loss {
                LossFn::SoftmaxCrossEntropy => "cross-entropy",
                LossFn::MeanSquaredError => "mse",
            }
            .into(),
        );
        put("hidden", join(&self.hidden));
        put(
            "activation",
            match self.activation {
                Activation::Relu => "relu",
                Activation::Tanh => "tanh",
                Activation::Identity => "identity",
            }
            .into(),
        );
        match &self.dataset {
            DatasetSource::Xor { noise_std } => {
                put("dataset", "xor".into());
                put("noise_std", noise_std.to_string());
            }
            DatasetSource::Blobs { dim, separation } => {
                put("dataset", "blobs".into());
                put("dim", dim.to_string());
                put("separation", separation.to_string());
            }
            DatasetSource::Csv { train, dev, task } => {
                put("dataset", "csv".into());
                put("train_path", train.display().to_string());
                put("dev_path", dev.display().to_string());
                put(
                    "task",
                    match task {
                        TaskKind::Classification => "classification",
                        TaskKind::Regression => "regression",
                    }
                    .into(),
                );
            }
        }
        put("train_size", self.train_size.to_string());
        put("dev_size", self.dev_size.to_string());
        put("data_seed", self.data_seed.to_string());
        put("label_noise", self.label_noise.to_string());
        put("imbalance", self.imbalance.to_string());
        put("minority_class", self.minority_class.to_string());
        put("subsample", self.subsample.to_string());
        put("eval_every", self.eval_every.to_string());
        put("dump_masks_every", self.dump_masks_every.to_string());
        put("save_checkpoints", self.save_checkpoints.to_string());
        m
    }

    /// The canonical form as config-file text; parses back to `self`.
    pub fn to_text(&self) -> String {
        self.canonical().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
