// SPDX-License-Identifier: Apache-2.0

//! Run configuration: a flat `section.key = value` file plus overrides.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! section.key = value
//! ```
//!
//! Blank lines and `#` comments are ignored. Keys are case-sensitive; an
//! unknown key is an error. Lists are comma-separated. Relative dataset
//! paths resolve against `dataset.root`, which defaults to the
//! `FEDLMD_DATA_DIR` environment variable or `data`.
//!
//! [`RunConfig::snapshot`] writes every key, so parsing a snapshot gives
//! back an equal config.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{GaussianSpec, MajorityRule, PartitionPlan, PartitionStrategy};
use crate::engine::{EngineConfig, MaskMode, Weighting};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nn::Architecture;

pub const DATA_DIR_ENV: &str = "FEDLMD_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSource {
    /// IDX files (optionally gzipped) in `dataset.path`.
    Mnist,
    /// `dataset.train` and `dataset.test` CSV files.
    Csv,
    /// Gaussian blobs drawn from `dataset.synth_*`.
    Synth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub root: PathBuf,
    pub path: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    /// CSV class count; 0 infers it from the largest label.
    pub classes: usize,
    pub normalize: bool,
    pub synth: GaussianSpec,
    pub synth_test_per_class: usize,
    pub synth_seed: u64,
}

impl DatasetConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Lda,
    Sharding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub strategy: StrategyKind,
    pub alpha: f64,
    pub shards: usize,
    pub clients: usize,
    pub seed: u64,
    pub rule: MajorityRule,
    pub require_nonempty: bool,
    pub max_retries: usize,
}

impl PartitionConfig {
    pub fn plan(&self) -> PartitionPlan {
        PartitionPlan {
            strategy: match self.strategy {
                StrategyKind::Lda => PartitionStrategy::Lda { alpha: self.alpha },
                StrategyKind::Sharding => PartitionStrategy::Sharding { shards: self.shards },
            },
            clients: self.clients,
            seed: self.seed,
            rule: self.rule,
            require_nonempty: self.require_nonempty,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Cnn2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub conv1: usize,
    pub conv2: usize,
    pub kernel: usize,
    pub fc: usize,
}

impl ModelConfig {
    /// The architecture for examples of shape `feature_shape`.
    pub fn architecture(&self, feature_shape: &[usize], classes: usize) -> Result<Architecture> {
        match self.kind {
            ModelKind::Mlp => Ok(Architecture::mlp(feature_shape.iter().product(), &self.hidden, classes)),
            ModelKind::Cnn2 => match *feature_shape {
                [channels, height, width] => {
                    let arch = Architecture::Cnn2 {
                        channels,
                        height,
                        width,
                        conv1: self.conv1,
                        conv2: self.conv2,
                        kernel: self.kernel,
                        fc: self.fc,
                        classes,
                    };
                    arch.layer_shapes()?;
                    Ok(arch)
                }
                _ => Err(Error::config(format!(
                    "model.arch: cnn2 needs image-shaped examples, dataset has shape {feature_shape:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub engine: EngineConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let engine = EngineConfig {
            loss: crate::losses::LossSpec::new(LossKind::Lmd),
            ..Default::default()
        };
        RunConfig {
            dataset: DatasetConfig {
                source: DatasetSource::Mnist,
                root: PathBuf::from("data"),
                path: PathBuf::from("mnist-subset"),
                train: PathBuf::new(),
                test: PathBuf::new(),
                classes: 0,
                normalize: true,
                synth: GaussianSpec {
                    classes: 10,
                    per_class: 200,
                    dim: 20,
                    spacing: 3.0,
                },
                synth_test_per_class: 100,
                synth_seed: 0,
            },
            partition: PartitionConfig {
                strategy: StrategyKind::Lda,
                alpha: 0.1,
                shards: 2,
                clients: 100,
                seed: 0,
                rule: MajorityRule::MeanThreshold,
                require_nonempty: false,
                max_retries: 100,
            },
            model: ModelConfig {
                kind: ModelKind::Cnn2,
                hidden: vec![200, 200],
                conv1: 32,
                conv2: 64,
                kernel: 5,
                fc: 512,
            },
            engine,
            output: PathBuf::from("runs"),
        }
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn list_str(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_value<T: FromStr>(key: &str, value: &str, what: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: expected {what}, got {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| parse_value(key, s.trim(), "a comma-separated list of integers"))
        .collect()
}

fn parse_named<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| format!("{key}: {e}"))
}

impl RunConfig {
    /// Defaults with `dataset.root` taken from the environment when set.
    pub fn with_env_defaults() -> Self {
        let mut cfg = RunConfig::default();
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            cfg.dataset.root = PathBuf::from(dir);
        }
        cfg
    }

    /// Every key with its current value, in snapshot order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.dataset;
        let p = &self.partition;
        let m = &self.model;
        let e = &self.engine;
        let s = &e.schedule;
        let l = &e.loss;
        vec![
            (
                "dataset.name",
                match d.source {
                    DatasetSource::Mnist => "mnist",
                    DatasetSource::Csv => "csv",
                    DatasetSource::Synth => "synth",
                }
                .to_string(),
            ),
            ("dataset.root", path_str(&d.root)),
            ("dataset.path", path_str(&d.path)),
            ("dataset.train", path_str(&d.train)),
            ("dataset.test", path_str(&d.test)),
            ("dataset.classes", d.classes.to_string()),
            ("dataset.normalize", d.normalize.to_string()),
            ("dataset.synth_classes", d.synth.classes.to_string()),
            ("dataset.synth_per_class", d.synth.per_class.to_string()),
            ("dataset.synth_test_per_class", d.synth_test_per_class.to_string()),
            ("dataset.synth_dim", d.synth.dim.to_string()),
            ("dataset.synth_spacing", d.synth.spacing.to_string()),
            ("dataset.synth_seed", d.synth_seed.to_string()),
            ("dataset.augment_pad", e.augment.pad.to_string()),
            ("dataset.augment_flip", e.augment.flip.to_string()),
            (
                "partition.strategy",
                match p.strategy {
                    StrategyKind::Lda => "lda",
                    StrategyKind::Sharding => "sharding",
                }
                .to_string(),
            ),
            ("partition.alpha", p.alpha.to_string()),
            ("partition.shards", p.shards.to_string()),
            ("partition.clients", p.clients.to_string()),
            ("partition.seed", p.seed.to_string()),
            (
                "partition.majority_rule",
                match p.rule {
                    MajorityRule::MeanThreshold => "mean",
                    MajorityRule::SqrtThreshold => "sqrt",
                }
                .to_string(),
            ),
            ("partition.mask_set", e.mask_mode.to_string()),
            ("partition.require_nonempty", p.require_nonempty.to_string()),
            ("partition.max_retries", p.max_retries.to_string()),
            (
                "model.arch",
                match m.kind {
                    ModelKind::Mlp => "mlp",
                    ModelKind::Cnn2 => "cnn2",
                }
                .to_string(),
            ),
            ("model.hidden", list_str(&m.hidden)),
            ("model.conv1", m.conv1.to_string()),
            ("model.conv2", m.conv2.to_string()),
            ("model.kernel", m.kernel.to_string()),
            ("model.fc", m.fc.to_string()),
            ("loss.kind", l.kind.to_string()),
            ("loss.beta", l.beta.to_string()),
            ("loss.tau", l.tau.to_string()),
            ("loss.smoothing", l.smoothing.to_string()),
            ("loss.prox_mu", l.prox_mu.to_string()),
            ("schedule.rounds", s.rounds.to_string()),
            ("schedule.local_epochs", s.local_epochs.to_string()),
            ("schedule.clients_per_round", s.clients_per_round.to_string()),
            ("schedule.lr", s.lr0.to_string()),
            ("schedule.lr_decay", s.lr_decay.to_string()),
            ("schedule.batch_size", s.batch_size.to_string()),
            ("schedule.switch_round", s.switch_round.to_string()),
            ("schedule.server_momentum", s.server_momentum.to_string()),
            ("schedule.momentum", s.client_momentum.to_string()),
            ("schedule.weight_decay", s.weight_decay.to_string()),
            ("aggregation.weighting", e.weighting.to_string()),
            ("run.seed", e.seed.to_string()),
            ("run.workers", e.workers.to_string()),
            ("run.output", path_str(&self.output)),
        ]
    }

    /// Sets one key. The error message starts with the key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        let num = "a number";
        let int = "a non-negative integer";
        let d = &mut self.dataset;
        let p = &mut self.partition;
        let m = &mut self.model;
        let e = &mut self.engine;
        match key {
            "dataset.name" => {
                d.source = match value {
                    "mnist" => DatasetSource::Mnist,
                    "csv" => DatasetSource::Csv,
                    "synth" => DatasetSource::Synth,
                    _ => return Err(format!("{key}: expected mnist, csv or synth, got {value:?}")),
                }
            }
            "dataset.root" => d.root = PathBuf::from(value),
            "dataset.path" => d.path = PathBuf::from(value),
            "dataset.train" => d.train = PathBuf::from(value),
            "dataset.test" => d.test = PathBuf::from(value),
            "dataset.classes" => d.classes = parse_value(key, value, int)?,
            "dataset.normalize" => d.normalize = parse_bool(key, value)?,
            "dataset.synth_classes" => d.synth.classes = parse_value(key, value, int)?,
            "dataset.synth_per_class" => d.synth.per_class = parse_value(key, value, int)?,
            "dataset.synth_test_per_class" => d.synth_test_per_class = parse_value(key, value, int)?,
            "dataset.synth_dim" => d.synth.dim = parse_value(key, value, int)?,
            "dataset.synth_spacing" => d.synth.spacing = parse_value(key, value, num)?,
            "dataset.synth_seed" => d.synth_seed = parse_value(key, value, int)?,
            "dataset.augment_pad" => e.augment.pad = parse_value(key, value, int)?,
            "dataset.augment_flip" => e.augment.flip = parse_bool(key, value)?,
            "partition.strategy" => {
                p.strategy = match value {
                    "lda" => StrategyKind::Lda,
                    "sharding" => StrategyKind::Sharding,
                    _ => return Err(format!("{key}: expected lda or sharding, got {value:?}")),
                }
            }
            "partition.alpha" => p.alpha = parse_value(key, value, num)?,
            "partition.shards" => p.shards = parse_value(key, value, int)?,
            "partition.clients" => p.clients = parse_value(key, value, int)?,
            "partition.seed" => p.seed = parse_value(key, value, int)?,
            "partition.majority_rule" => {
                p.rule = match value {
                    "mean" => MajorityRule::MeanThreshold,
                    "sqrt" => MajorityRule::SqrtThreshold,
                    _ => return Err(format!("{key}: expected mean or sqrt, got {value:?}")),
                }
            }
            "partition.mask_set" => e.mask_mode = parse_named::<MaskMode>(key, value)?,
            "partition.require_nonempty" => p.require_nonempty = parse_bool(key, value)?,
            "partition.max_retries" => p.max_retries = parse_value(key, value, int)?,
            "model.arch" => {
                m.kind = match value {
                    "mlp" => ModelKind::Mlp,
                    "cnn2" => ModelKind::Cnn2,
                    _ => return Err(format!("{key}: expected mlp or cnn2, got {value:?}")),
                }
            }
            "model.hidden" => m.hidden = parse_list(key, value)?,
            "model.conv1" => m.conv1 = parse_value(key, value, int)?,
            "model.conv2" => m.conv2 = parse_value(key, value, int)?,
            "model.kernel" => m.kernel = parse_value(key, value, int)?,
            "model.fc" => m.fc = parse_value(key, value, int)?,
            "loss.kind" => e.loss.kind = parse_named::<LossKind>(key, value)?,
            "loss.beta" => e.loss.beta = parse_value(key, value, num)?,
            "loss.tau" => e.loss.tau = parse_value(key, value, num)?,
            "loss.smoothing" => e.loss.smoothing = parse_value(key, value, num)?,
            "loss.prox_mu" => e.loss.prox_mu = parse_value(key, value, num)?,
            "schedule.rounds" => e.schedule.rounds = parse_value(key, value, int)?,
            "schedule.local_epochs" => e.schedule.local_epochs = parse_value(key, value, int)?,
            "schedule.clients_per_round" => e.schedule.clients_per_round = parse_value(key, value, int)?,
            "schedule.lr" => e.schedule.lr0 = parse_value(key, value, num)?,
            "schedule.lr_decay" => e.schedule.lr_decay = parse_value(key, value, num)?,
            "schedule.batch_size" => e.schedule.batch_size = parse_value(key, value, int)?,
            "schedule.switch_round" => e.schedule.switch_round = parse_value(key, value, int)?,
            "schedule.server_momentum" => e.schedule.server_momentum = parse_value(key, value, num)?,
            "schedule.momentum" => e.schedule.client_momentum = parse_value(key, value, num)?,
            "schedule.weight_decay" => e.schedule.weight_decay = parse_value(key, value, num)?,
            "aggregation.weighting" => e.weighting = parse_named::<Weighting>(key, value)?,
            "run.seed" => e.seed = parse_value(key, value, int)?,
            "run.workers" => e.workers = parse_value(key, value, int)?,
            "run.output" => self.output = PathBuf::from(value),
            _ => return Err(format!("{key}: unknown key")),
        }
        Ok(())
    }

    /// Every violated constraint, each prefixed by its key.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.engine.violations(self.partition.clients);
        let p = &self.partition;
        if p.clients == 0 {
            out.push("partition.clients: must be at least 1".into());
        }
        if p.strategy == StrategyKind::Lda && !(p.alpha > 0.0 && p.alpha.is_finite()) {
            out.push(format!("partition.alpha: must be positive, got {}", p.alpha));
        }
        if p.strategy == StrategyKind::Sharding && p.shards == 0 {
            out.push("partition.shards: must be at least 1".into());
        }
        let d = &self.dataset;
        match d.source {
            DatasetSource::Csv => {
                if d.train.as_os_str().is_empty() {
                    out.push("dataset.train: required for csv datasets".into());
                }
                if d.test.as_os_str().is_empty() {
                    out.push("dataset.test: required for csv datasets".into());
                }
            }
            DatasetSource::Synth => {
                if d.synth.classes < 2 {
                    out.push("dataset.synth_classes: must be at least 2".into());
                }
                if d.synth.per_class == 0 {
                    out.push("dataset.synth_per_class: must be positive".into());
                }
                if d.synth_test_per_class == 0 {
                    out.push("dataset.synth_test_per_class: must be positive".into());
                }
                if d.synth.dim == 0 {
                    out.push("dataset.synth_dim: must be positive".into());
                }
                if !d.synth.spacing.is_finite() {
                    out.push("dataset.synth_spacing: must be finite".into());
                }
            }
            DatasetSource::Mnist => {}
        }
        let m = &self.model;
        if m.hidden.contains(&0) {
            out.push("model.hidden: widths must be positive".into());
        }
        if m.kind == ModelKind::Cnn2 {
            for (key, v) in [
                ("model.conv1", m.conv1),
                ("model.conv2", m.conv2),
                ("model.kernel", m.kernel),
                ("model.fc", m.fc),
            ] {
                if v == 0 {
                    out.push(format!("{key}: must be positive"));
                }
            }
        }
        out
    }

    /// Applies `text` then `overrides` on top of `self` and validates.
    pub fn apply(mut self, text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut errors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v) {
                        errors.push(format!("{e} (line {})", n + 1));
                    }
                }
                None => errors.push(format!("line {}: expected `key = value`, got {line:?}", n + 1)),
            }
        }
        for (k, v) in overrides {
            if let Err(e) = self.set(k, v) {
                errors.push(format!("{e} (override)"));
            }
        }
        if errors.is_empty() {
            errors = self.violations();
        }
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Parses a config file's text over environment-aware defaults.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        RunConfig::with_env_defaults().apply(text, overrides)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, overrides)
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Short hex digest of every key that can affect results, so
    /// `run.output` and `run.workers` are left out.
    pub fn short_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "run.output" && k != "run.workers" {
                h.update(k.as_bytes());
                h.update(b"=");
                h.update(v.as_bytes());
                h.update(b"\n");
            }
        }
        h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

/// Splits `key=value` into its parts.
pub fn split_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
        None => Err(Error::config(format!("override {s:?} is not key=value"))),
    }
}
