use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::hippo::HippoFamily;
use crate::layer::{NormPlacement, Pooling, TrainMode};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Delay,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSize {
    Small,
    Large,
    Custom,
}

/// Kernel dump output matrix: the model's own `C`, or one-hot `e_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelOutput {
    Model,
    OneHot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub model_size: ModelSize,
    pub h: usize,
    pub n: usize,
    pub m: usize,
    pub depth: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub norm: NormPlacement,
    pub family: HippoFamily,
    /// `None` picks by task: sequence output for regression, mean for
    /// classification.
    pub pooling: Option<Pooling>,
    /// Stop once validation loss falls below this; 0 disables.
    pub stop_below: f64,

    pub seq_len: usize,
    pub delay: usize,
    pub train_size: usize,
    pub val_size: usize,

    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub val_images: Option<PathBuf>,
    pub val_labels: Option<PathBuf>,
    pub limit: usize,

    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,

    pub kernel_len: usize,
    pub kernel_layer: usize,
    pub kernel_c: KernelOutput,

    pub gradcheck_samples: usize,
    pub gradcheck_batch: usize,
    pub gradcheck_tol: f64,
    pub inject_fault: bool,

    pub signal: Option<PathBuf>,
    pub signal_dt: f64,
    pub orders: Vec<usize>,

    pub bench_orders: Vec<usize>,
    pub bench_lens: Vec<usize>,
    pub bench_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Delay,
            model_size: ModelSize::Small,
            h: 32,
            n: 64,
            m: 1,
            depth: 2,
            dt_min: 1e-3,
            dt_max: 1e-1,
            lr: 1e-2,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            mode: TrainMode::Fixed,
            norm: NormPlacement::PostNorm,
            family: HippoFamily::LegS,
            pooling: None,
            stop_below: 0.0,
            seq_len: 200,
            delay: 50,
            train_size: 2000,
            val_size: 200,
            train_images: None,
            train_labels: None,
            val_images: None,
            val_labels: None,
            limit: usize::MAX,
            out: PathBuf::from("out"),
            checkpoint: None,
            kernel_len: 256,
            kernel_layer: 0,
            kernel_c: KernelOutput::Model,
            gradcheck_samples: 64,
            gradcheck_batch: 2,
            gradcheck_tol: 1e-4,
            inject_fault: false,
            signal: None,
            signal_dt: 1e-3,
            orders: vec![4, 8, 16, 32, 64],
            bench_orders: vec![16, 32, 64, 128],
            bench_lens: vec![256, 1024, 4096],
            bench_repeats: 5,
        }
    }
}

const KEYS: &[&str] = &[
    "task",
    "model_size",
    "h",
    "n",
    "m",
    "depth",
    "dt_min",
    "dt_max",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "mode",
    "norm",
    "family",
    "pooling",
    "stop_below",
    "seq_len",
    "delay",
    "train_size",
    "val_size",
    "train_images",
    "train_labels",
    "val_images",
    "val_labels",
    "limit",
    "out",
    "checkpoint",
    "kernel_len",
    "kernel_layer",
    "kernel_c",
    "gradcheck_samples",
    "gradcheck_batch",
    "gradcheck_tol",
    "inject_fault",
    "signal",
    "signal_dt",
    "orders",
    "bench_orders",
    "bench_lens",
    "bench_repeats",
];

pub fn parse_mode(s: &str) -> Option<TrainMode> {
    match s {
        "fixed" => Some(TrainMode::Fixed),
        "full" => Some(TrainMode::Full),
        _ => None,
    }
}

fn parse_list(s: &str) -> Option<Vec<usize>> {
    let v: Option<Vec<usize>> = s.split(',').map(|t| t.trim().parse().ok()).collect();
    v.filter(|v| !v.is_empty())
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl RunConfig {
    /// Parse flat `key = value` text. `#` starts a comment. A
    /// `model_size` preset is applied before the other keys, whatever the
    /// line order.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: "expected `key = value`".into() })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            if entries.insert(key, (line, value)).is_some() {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
        }

        let mut cfg = RunConfig::default();
        if let Some(&(line, value)) = entries.get("model_size") {
            cfg.set("model_size", value, line)?;
        }
        for (key, (line, value)) in entries.iter().filter(|(k, _)| **k != "model_size") {
            cfg.set(key, value, *line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue { line, key: key.into(), value: value.into() };
        let count = || value.parse::<usize>().map_err(|_| bad());
        let real = || parse_f64(value).ok_or_else(bad);
        let path = || if value.is_empty() { Err(bad()) } else { Ok(PathBuf::from(value)) };
        match key {
            "task" => {
                self.task = match value {
                    "delay" => Task::Delay,
                    "idx" => Task::Idx,
                    _ => return Err(bad()),
                }
            }
            "model_size" => {
                self.model_size = match value {
                    "small" => ModelSize::Small,
                    "large" => ModelSize::Large,
                    "custom" => ModelSize::Custom,
                    _ => return Err(bad()),
                };
                match self.model_size {
                    ModelSize::Small => (self.depth, self.h, self.n) = (2, 32, 64),
                    ModelSize::Large => (self.depth, self.h, self.n) = (4, 128, 128),
                    ModelSize::Custom => {}
                }
            }
            "h" => self.h = count()?,
            "n" => self.n = count()?,
            "m" => self.m = count()?,
            "depth" => self.depth = count()?,
            "dt_min" => self.dt_min = real()?,
            "dt_max" => self.dt_max = real()?,
            "lr" => self.lr = real()?,
            "batch_size" => self.batch_size = count()?,
            "epochs" => self.epochs = count()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "mode" => self.mode = parse_mode(value).ok_or_else(bad)?,
            "norm" => {
                self.norm = match value {
                    "pre" => NormPlacement::PreNorm,
                    "post" => NormPlacement::PostNorm,
                    _ => return Err(bad()),
                }
            }
            "family" => {
                self.family = match value {
                    "legs" => HippoFamily::LegS,
                    "legt" => HippoFamily::LegT,
                    "lagt" => HippoFamily::LagT { beta: 1.0 },
                    _ => return Err(bad()),
                }
            }
            "pooling" => {
                self.pooling = match value {
                    "mean" => Some(Pooling::MeanOverTime),
                    "last" => Some(Pooling::LastStep),
                    "sequence" => Some(Pooling::Sequence),
                    "auto" => None,
                    _ => return Err(bad()),
                }
            }
            "stop_below" => self.stop_below = real()?,
            "seq_len" => self.seq_len = count()?,
            "delay" => self.delay = count()?,
            "train_size" => self.train_size = count()?,
            "val_size" => self.val_size = count()?,
            "train_images" => self.train_images = Some(path()?),
            "train_labels" => self.train_labels = Some(path()?),
            "val_images" => self.val_images = Some(path()?),
            "val_labels" => self.val_labels = Some(path()?),
            "limit" => self.limit = count()?,
            "out" => self.out = path()?,
            "checkpoint" => self.checkpoint = Some(path()?),
            "kernel_len" => self.kernel_len = count()?,
            "kernel_layer" => self.kernel_layer = count()?,
            "kernel_c" => {
                self.kernel_c = match value {
                    "model" => KernelOutput::Model,
                    _ => KernelOutput::OneHot(value.strip_prefix('e').and_then(|k| k.parse().ok()).ok_or_else(bad)?),
                }
            }
            "gradcheck_samples" => self.gradcheck_samples = count()?,
            "gradcheck_batch" => self.gradcheck_batch = count()?,
            "gradcheck_tol" => self.gradcheck_tol = real()?,
            "inject_fault" => self.inject_fault = value.parse().map_err(|_| bad())?,
            "signal" => self.signal = Some(path()?),
            "signal_dt" => self.signal_dt = real()?,
            "orders" => self.orders = parse_list(value).ok_or_else(bad)?,
            "bench_orders" => self.bench_orders = parse_list(value).ok_or_else(bad)?,
            "bench_lens" => self.bench_lens = parse_list(value).ok_or_else(bad)?,
            "bench_repeats" => self.bench_repeats = count()?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.into()));
        if self.h == 0 || self.n == 0 || self.m == 0 || self.depth == 0 {
            return fail("h, n, m and depth must be positive");
        }
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min) {
            return fail("need 0 < dt_min <= dt_max");
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if self.batch_size == 0 || self.gradcheck_batch == 0 || self.bench_repeats == 0 {
            return fail("batch sizes and bench_repeats must be positive");
        }
        if self.seq_len == 0 || self.delay >= self.seq_len {
            return fail("need delay < seq_len");
        }
        if self.stop_below < 0.0 || !(self.gradcheck_tol > 0.0) || !(self.signal_dt > 0.0) {
            return fail("stop_below must be non-negative, gradcheck_tol and signal_dt positive");
        }
        if self.orders.contains(&0) || self.bench_orders.contains(&0) || self.bench_lens.contains(&0) {
            return fail("orders and lengths must be positive");
        }
        if let KernelOutput::OneHot(k) = self.kernel_c {
            if k >= self.n {
                return fail("kernel_c index must be below n");
            }
        }
        Ok(())
    }
}
