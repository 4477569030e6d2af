//! Command-line front end: `train`, `eval`, `kernel`, `gradcheck`,
//! `memorize` and `bench`.

mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use thiserror::Error;

pub use config::{parse_mode, ConfigError, KernelOutput, ModelSize, RunConfig, Task};

use crate::disc::gbt_discretize;
use crate::error::LsslError;
use crate::grad::{apply_adam, gradcheck_model, model_backward, AdamState, FaultInjection, LossSpec};
use crate::hippo::structured_legs;
use crate::kernel::{krylov_matrix, resolvent_kernel_fast};
use crate::layer::{load_checkpoint, save_checkpoint, Labels, LsslModel, ModelConfig, Pooling, SequenceBatch, ViewMode};
use crate::linalg::DenseMatrix;
use crate::rng;
use crate::tasks::{fmt_f64, load_idx, make_delay_task, parse_signal_csv, reconstruct_history, Split, TaskKind};

pub const METRICS_HEADER: &str = "epoch,split,loss,metric,wall_seconds";
pub const PLATEAU_FACTOR: f64 = 0.2;
pub const PLATEAU_PATIENCE: usize = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(LsslError),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(LsslError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) | CliError::Model(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl From<LsslError> for CliError {
    fn from(e: LsslError) -> Self {
        match e {
            LsslError::Io(io) => CliError::Io(io),
            other => CliError::Model(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lssl", about = "Linear state-space layers")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalFlags {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// fixed | full
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write 0 for every wall-clock field.
    #[arg(long, global = true)]
    pub no_timestamps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    Train,
    Eval,
    Kernel,
    Gradcheck,
    Memorize,
    Bench,
}

/// Parse arguments, run the subcommand and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(cli.command, &cfg, cli.global.no_timestamps) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config file (if any) with command-line overrides applied.
pub fn load_config(flags: &GlobalFlags) -> Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(m) = &flags.mode {
        cfg.mode = parse_mode(m).ok_or_else(|| ConfigError::Invalid(format!("--mode {m:?}")))?;
    }
    if let Some(o) = &flags.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

pub fn execute(command: Command, cfg: &RunConfig, no_timestamps: bool) -> Result<i32, CliError> {
    fs::create_dir_all(&cfg.out)?;
    match command {
        Command::Train => cmd_train(cfg, no_timestamps).map(|s| {
            println!("epochs={} best_val_loss={} lr={}", s.epochs_run, fmt_f64(s.best_val_loss), fmt_f64(s.final_lr));
            0
        }),
        Command::Eval => cmd_eval(cfg).map(|_| 0),
        Command::Kernel => cmd_kernel(cfg).map(|_| 0),
        Command::Gradcheck => cmd_gradcheck(cfg).map(|r| i32::from(!r.passed)),
        Command::Memorize => cmd_memorize(cfg).map(|_| 0),
        Command::Bench => cmd_bench(cfg, no_timestamps).map(|_| 0),
    }
}

/// Train and validation sets for the configured task.
pub fn load_data(cfg: &RunConfig) -> Result<(SequenceBatch, SequenceBatch, TaskKind, usize), CliError> {
    match cfg.task {
        Task::Delay => {
            let train = make_delay_task(cfg.seq_len, cfg.delay, cfg.train_size, rng::split(cfg.seed, 100)).map_err(CliError::Data)?;
            let val = make_delay_task(cfg.seq_len, cfg.delay, cfg.val_size, rng::split(cfg.seed, 101)).map_err(CliError::Data)?;
            Ok((train.sequences, val.sequences, TaskKind::Regress, 1))
        }
        Task::Idx => {
            let need = |p: &Option<PathBuf>, what: &str| {
                p.clone().ok_or_else(|| CliError::Config(ConfigError::Invalid(format!("task = idx needs {what}"))))
            };
            let train = load_idx(&need(&cfg.train_images, "train_images")?, &need(&cfg.train_labels, "train_labels")?, cfg.limit)
                .map_err(CliError::Data)?;
            let val = load_idx(&need(&cfg.val_images, "val_images")?, &need(&cfg.val_labels, "val_labels")?, cfg.limit)
                .map_err(CliError::Data)?;
            let mut val = val;
            val.split = Split::Val;
            Ok((train.sequences, val.sequences, TaskKind::Classify, train.classes))
        }
    }
}

fn loss_for(kind: TaskKind) -> LossSpec {
    match kind {
        TaskKind::Regress => LossSpec::Mse,
        TaskKind::Classify => LossSpec::CrossEntropy,
    }
}

fn pooling_for(cfg: &RunConfig, kind: TaskKind) -> Pooling {
    cfg.pooling.unwrap_or(match kind {
        TaskKind::Regress => Pooling::Sequence,
        TaskKind::Classify => Pooling::MeanOverTime,
    })
}

pub fn model_config(cfg: &RunConfig, kind: TaskKind, classes: usize) -> ModelConfig {
    ModelConfig {
        input_dim: 1,
        h: cfg.h,
        n: cfg.n,
        m: cfg.m,
        depth: cfg.depth,
        classes,
        dt_min: cfg.dt_min,
        dt_max: cfg.dt_max,
        family: cfg.family,
        norm: cfg.norm,
        pooling: pooling_for(cfg, kind),
        mode: cfg.mode,
        seed: cfg.seed,
    }
}

/// Mean loss and the task metric: RMSE for regression, accuracy for
/// classification.
pub fn evaluate(model: &LsslModel, data: &SequenceBatch, kind: TaskKind) -> Result<(f64, f64), CliError> {
    if data.is_empty() {
        return Err(CliError::Data(LsslError::InvalidParameter("empty evaluation set".into())));
    }
    let mut losses = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    for (i, u) in data.data.iter().enumerate() {
        let out = model.forward(u, ViewMode::Conv)?;
        match &data.labels {
            Labels::Targets(t) => {
                let target = &t[i];
                if target.rows() != out.rows() || target.cols() != out.cols() {
                    return Err(CliError::Data(LsslError::DimensionMismatch("target shape".into())));
                }
                let se: f64 = out.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
                losses.push(se / out.as_slice().len() as f64);
            }
            Labels::Classes(c) => {
                let logits = out.row(out.rows() - 1);
                let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                let k = *c.get(i).ok_or_else(|| CliError::Data(LsslError::InvalidParameter("label count".into())))?;
                if k >= logits.len() {
                    return Err(CliError::Data(LsslError::InvalidParameter(format!("label {k} out of range"))));
                }
                losses.push(lse - logits[k]);
                let arg = (0..logits.len()).fold(0, |best, j| if logits[j] > logits[best] { j } else { best });
                correct += usize::from(arg == k);
            }
        }
    }
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let metric = match kind {
        TaskKind::Regress => loss.sqrt(),
        TaskKind::Classify => correct as f64 / data.len() as f64,
    };
    Ok((loss, metric))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub final_lr: f64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

fn metrics_row(w: &mut impl Write, epoch: usize, split: &str, loss: f64, metric: f64, wall: f64, no_ts: bool) -> std::io::Result<()> {
    let wall = if no_ts { "0".to_string() } else { format!("{wall:.3}") };
    writeln!(w, "{epoch},{split},{},{},{wall}", fmt_f64(loss), fmt_f64(metric))
}

/// Adam with reduce-on-plateau over validation loss. Writes
/// `metrics.csv` and the best-validation checkpoint `best.ckpt` to `out`.
pub fn cmd_train(cfg: &RunConfig, no_timestamps: bool) -> Result<TrainSummary, CliError> {
    let (train, val, kind, classes) = load_data(cfg)?;
    if train.is_empty() {
        return Err(CliError::Data(LsslError::InvalidParameter("empty training set".into())));
    }
    let loss = loss_for(kind);
    let mut model = LsslModel::new(&model_config(cfg, kind, classes))?;
    fs::create_dir_all(&cfg.out)?;
    let ckpt = cfg.out.join("best.ckpt");
    let metrics_path = cfg.out.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;
    save_checkpoint(&model, &ckpt)?;

    let start = Instant::now();
    let mut adam = AdamState::new(model.param_count());
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut bad_epochs = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, 3);
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select(chunk);
            let (l, g) = match model_backward(&model, &batch, loss) {
                Ok(r) => r,
                Err(LsslError::NonFinite(_) | LsslError::SingularPivot { .. }) => return Err(CliError::Diverged(epoch)),
                Err(e) => return Err(e.into()),
            };
            if !l.is_finite() || !g.is_finite() {
                return Err(CliError::Diverged(epoch));
            }
            apply_adam(&mut model, &g, &mut adam, lr)?;
            if !model.flat_params().iter().all(|v| v.is_finite()) {
                return Err(CliError::Diverged(epoch));
            }
            weighted += l * chunk.len() as f64;
        }
        let train_loss = weighted / train.len() as f64;
        let train_metric = match kind {
            TaskKind::Regress => train_loss.sqrt(),
            TaskKind::Classify => evaluate(&model, &train, kind)?.1,
        };
        let (val_loss, val_metric) = match evaluate(&model, &val, kind) {
            Err(CliError::Model(LsslError::NonFinite(_) | LsslError::SingularPivot { .. })) => return Err(CliError::Diverged(epoch)),
            other => other?,
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(CliError::Diverged(epoch));
        }
        let wall = start.elapsed().as_secs_f64();
        metrics_row(&mut metrics, epoch, "train", train_loss, train_metric, wall, no_timestamps)?;
        metrics_row(&mut metrics, epoch, "val", val_loss, val_metric, wall, no_timestamps)?;
        metrics.flush()?;
        epochs_run = epoch;

        if val_loss < best {
            best = val_loss;
            bad_epochs = 0;
            save_checkpoint(&model, &ckpt)?;
        } else {
            bad_epochs += 1;
            if bad_epochs > PLATEAU_PATIENCE {
                lr *= PLATEAU_FACTOR;
                bad_epochs = 0;
            }
        }
        if val_loss < cfg.stop_below {
            break;
        }
    }
    Ok(TrainSummary { epochs_run, best_val_loss: best, final_lr: lr, checkpoint: ckpt, metrics: metrics_path })
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("best.ckpt"))
}

fn read_checkpoint(path: &Path) -> Result<LsslModel, CliError> {
    load_checkpoint(path).map_err(|e| match e {
        LsslError::Io(io) => CliError::Io(io),
        other => CliError::Data(other),
    })
}

/// Validation loss and metric of a saved checkpoint; writes `eval.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(f64, f64), CliError> {
    let (_, val, kind, _) = load_data(cfg)?;
    let mut model = read_checkpoint(&checkpoint_path(cfg))?;
    model.pooling = pooling_for(cfg, kind);
    let (loss, metric) = evaluate(&model, &val, kind)?;
    let text = format!("split,loss,metric\nval,{},{}\n", fmt_f64(loss), fmt_f64(metric));
    fs::write(cfg.out.join("eval.csv"), &text)?;
    print!("{text}");
    Ok((loss, metric))
}

/// Taps of one layer, one CSV row per feature and channel.
pub fn cmd_kernel(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut model = match &cfg.checkpoint {
        Some(p) => read_checkpoint(p)?,
        None => LsslModel::new(&model_config(cfg, TaskKind::Regress, 1))?,
    };
    let depth = model.layers.len();
    let layer = model.layers.get_mut(cfg.kernel_layer).ok_or_else(|| {
        CliError::Config(ConfigError::Invalid(format!("kernel_layer {} for depth {depth}", cfg.kernel_layer)))
    })?;
    if let KernelOutput::OneHot(k) = cfg.kernel_c {
        let n = layer.order();
        if k >= n {
            return Err(CliError::Config(ConfigError::Invalid(format!("kernel_c index {k} for N = {n}"))));
        }
        for c in &mut layer.c {
            *c = DenseMatrix::from_fn(c.rows(), n, |_, j| if j == k { 1.0 } else { 0.0 });
        }
    }
    let rows = layer.kernels(cfg.kernel_len)?;
    let path = cfg.out.join("kernel.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt_f64).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Central-difference check of the analytic gradient on the first
/// `gradcheck_batch` training sequences.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckOutcome, CliError> {
    let (train, _, kind, classes) = load_data(cfg)?;
    let take: Vec<usize> = (0..cfg.gradcheck_batch.min(train.len())).collect();
    if take.is_empty() {
        return Err(CliError::Data(LsslError::InvalidParameter("no sequences to check".into())));
    }
    let batch = train.select(&take);
    let model = LsslModel::new(&model_config(cfg, kind, classes))?;
    let fault = FaultInjection { flip_dt_sign: cfg.inject_fault };
    let report = gradcheck_model(&model, &batch, loss_for(kind), cfg.gradcheck_samples, cfg.seed, fault)?;
    let passed = report.max_rel_err < cfg.gradcheck_tol;
    let text = format!(
        "checked,max_rel_err,worst_index,result\n{},{},{},{}\n",
        report.checked,
        fmt_f64(report.max_rel_err),
        report.worst_index,
        if passed { "pass" } else { "fail" }
    );
    fs::write(cfg.out.join("gradcheck.csv"), &text)?;
    print!("{text}");
    Ok(GradcheckOutcome { checked: report.checked, max_rel_err: report.max_rel_err, passed })
}

/// Reconstruction error of `signal` at every order in `orders`; writes
/// `memorize.csv`.
pub fn cmd_memorize(cfg: &RunConfig) -> Result<Vec<(usize, f64)>, CliError> {
    let path = cfg
        .signal
        .clone()
        .ok_or_else(|| CliError::Config(ConfigError::Invalid("memorize needs `signal`".into())))?;
    let text = fs::read_to_string(&path)?;
    let u = parse_signal_csv(&text).map_err(CliError::Data)?;
    let id = path.file_stem().map_or_else(|| "signal".into(), |s| s.to_string_lossy().into_owned());
    let mut out = String::from("signal_id,N,l2_error\n");
    let mut rows = Vec::new();
    for &n in &cfg.orders {
        let r = reconstruct_history(&u, cfg.signal_dt, n, &id).map_err(CliError::Data)?;
        out.push_str(&format!("{},{},{}\n", r.report.signal_id, n, fmt_f64(r.report.l2_error)));
        rows.push((n, r.report.l2_error));
    }
    fs::write(cfg.out.join("memorize.csv"), &out)?;
    print!("{out}");
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub op: &'static str,
    pub n: usize,
    pub len: usize,
    pub median_seconds: f64,
}

fn median_time(repeats: usize, mut f: impl FnMut() -> Result<(), CliError>) -> Result<f64, CliError> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

const MVM_REPS: usize = 1000;

/// Median wall times of kernel construction (step-by-step unroll, repeated
/// squaring, fast resolvent) and of structured vs dense multiplication.
/// Writes `bench.csv`.
pub fn cmd_bench(cfg: &RunConfig, no_timestamps: bool) -> Result<Vec<BenchRow>, CliError> {
    let mut rows = Vec::new();
    let mut r = rng::stream(cfg.seed, 9);
    for &n in &cfg.bench_orders {
        let s = structured_legs(n)?.negated();
        let a = s.to_dense()?;
        let b: Vec<f64> = crate::hippo::legs_matrix(n)?.b.to_vec();
        let c = rng::uniform_vec(&mut r, n, -1.0, 1.0);
        let x = rng::uniform_vec(&mut r, n, -1.0, 1.0);
        for &len in &cfg.bench_lens {
            let (ab, bb) = gbt_discretize(&a, &b, 1.0 / len as f64, 0.5)?;
            let t = median_time(cfg.bench_repeats, || {
                let mut v = bb.to_vec();
                let mut out = vec![0.0; n];
                let mut taps = Vec::with_capacity(len);
                for _ in 0..len {
                    taps.push(crate::linalg::dot(&c, &v));
                    ab.matvec_into(&v, &mut out);
                    std::mem::swap(&mut v, &mut out);
                }
                std::hint::black_box(taps);
                Ok(())
            })?;
            rows.push(BenchRow { op: "naive_unroll", n, len, median_seconds: t });
            let t = median_time(cfg.bench_repeats, || {
                std::hint::black_box(krylov_matrix(&ab, &bb, len)?);
                Ok(())
            })?;
            rows.push(BenchRow { op: "squaring", n, len, median_seconds: t });
            if n.is_power_of_two() && n <= 64 && len <= 4096 {
                let t = median_time(cfg.bench_repeats, || {
                    std::hint::black_box(resolvent_kernel_fast(&ab, &bb, &c, len)?);
                    Ok(())
                })?;
                rows.push(BenchRow { op: "fast_resolvent", n, len, median_seconds: t });
            }
        }
        let t = median_time(cfg.bench_repeats, || {
            for _ in 0..MVM_REPS {
                std::hint::black_box(s.apply(std::hint::black_box(&x))?);
            }
            Ok(())
        })?;
        rows.push(BenchRow { op: "structured_mvm", n, len: 0, median_seconds: t / MVM_REPS as f64 });
        let t = median_time(cfg.bench_repeats, || {
            let mut out = vec![0.0; n];
            for _ in 0..MVM_REPS {
                a.matvec_into(std::hint::black_box(&x), &mut out);
                std::hint::black_box(&out);
            }
            Ok(())
        })?;
        rows.push(BenchRow { op: "dense_mvm", n, len: 0, median_seconds: t / MVM_REPS as f64 });
    }
    let mut text = String::from("op,N,L,median_seconds\n");
    for row in &rows {
        let t = if no_timestamps { "0".to_string() } else { format!("{:e}", row.median_seconds) };
        text.push_str(&format!("{},{},{},{t}\n", row.op, row.n, row.len));
    }
    fs::write(cfg.out.join("bench.csv"), &text)?;
    print!("{text}");
    Ok(rows)
}
