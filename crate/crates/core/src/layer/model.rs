use super::{init_layer, LayerTape, LsslLayer, NormPlacement, StateMatrix, TrainMode, ViewMode};
use crate::error::{dim_check, LsslError, Result};
use crate::hippo::HippoFamily;
use crate::linalg::{dot, DenseMatrix};
use crate::rng;

/// How the decoder sees the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    MeanOverTime,
    LastStep,
    /// No pooling: one decoded output per timestep (sequence-to-sequence).
    Sequence,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    /// One `T_out x classes` target per sequence.
    Targets(Vec<DenseMatrix>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sequences of shape `L x input_dim` with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub data: Vec<DenseMatrix>,
    pub labels: Labels,
}

impl SequenceBatch {
    pub fn new(data: Vec<DenseMatrix>, labels: Labels) -> Result<Self> {
        dim_check(data.len() == labels.len(), || {
            format!("{} sequences with {} labels", data.len(), labels.len())
        })?;
        if let Some(first) = data.first() {
            dim_check(data.iter().all(|d| d.rows() == first.rows() && d.cols() == first.cols()), || {
                "sequences in a batch must share length and width".into()
            })?;
        }
        Ok(Self { data, labels })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Sub-batch of the given sequence indices.
    pub fn select(&self, idx: &[usize]) -> Self {
        let data = idx.iter().map(|&i| self.data[i].clone()).collect();
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Targets(t) => Labels::Targets(idx.iter().map(|&i| t[i].clone()).collect()),
        };
        Self { data, labels }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub h: usize,
    pub n: usize,
    pub m: usize,
    pub depth: usize,
    pub classes: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub family: HippoFamily,
    pub norm: NormPlacement,
    pub pooling: Pooling,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            h: 32,
            n: 64,
            m: 1,
            depth: 2,
            classes: 1,
            dt_min: 1e-3,
            dt_max: 1e-1,
            family: HippoFamily::LegS,
            norm: NormPlacement::PostNorm,
            pooling: Pooling::MeanOverTime,
            mode: TrainMode::Fixed,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsslModel {
    /// `H x input_dim`.
    pub encoder_w: DenseMatrix,
    pub encoder_b: Vec<f64>,
    pub layers: Vec<LsslLayer>,
    /// `classes x H`.
    pub decoder_w: DenseMatrix,
    pub decoder_b: Vec<f64>,
    pub norm: NormPlacement,
    pub pooling: Pooling,
}

/// Forward intermediates for one sequence.
#[derive(Debug, Clone)]
pub(crate) struct ModelTape {
    pub layer_tapes: Vec<LayerTape>,
    pub pooled: DenseMatrix,
}

impl LsslModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.classes == 0 || cfg.depth == 0 {
            return Err(LsslError::InvalidParameter("input_dim, classes and depth must be positive".into()));
        }
        let mut layers = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let mut layer = init_layer(cfg.h, cfg.n, cfg.m, cfg.dt_min, cfg.dt_max, rng::split(cfg.seed, 1 + i as u64), cfg.family)?;
            layer.norm = cfg.norm;
            layer.set_mode(cfg.mode)?;
            layers.push(layer);
        }
        let mut r = rng::stream(cfg.seed, 0);
        let be = 1.0 / (cfg.input_dim as f64).sqrt();
        let encoder_w = DenseMatrix::from_fn(cfg.h, cfg.input_dim, |_, _| rng::uniform(&mut r, -be, be));
        let bd = 1.0 / (cfg.h as f64).sqrt();
        let decoder_w = DenseMatrix::from_fn(cfg.classes, cfg.h, |_, _| rng::uniform(&mut r, -bd, bd));
        Ok(Self {
            encoder_w,
            encoder_b: vec![0.0; cfg.h],
            layers,
            decoder_w,
            decoder_b: vec![0.0; cfg.classes],
            norm: cfg.norm,
            pooling: cfg.pooling,
        })
    }

    pub fn features(&self) -> usize {
        self.encoder_w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_w.cols()
    }

    pub fn classes(&self) -> usize {
        self.decoder_w.rows()
    }

    pub fn set_mode(&mut self, mode: TrainMode) -> Result<()> {
        self.layers.iter_mut().try_for_each(|l| l.set_mode(mode))
    }

    pub(crate) fn forward_tape(&self, u: &DenseMatrix, view: ViewMode) -> Result<(DenseMatrix, ModelTape)> {
        dim_check(u.cols() == self.input_dim() && u.rows() > 0, || {
            format!("input is {}x{}, expected L x {}", u.rows(), u.cols(), self.input_dim())
        })?;
        let len = u.rows();
        let hdim = self.features();
        let mut x = DenseMatrix::zeros(len, hdim);
        for t in 0..len {
            for h in 0..hdim {
                x[(t, h)] = self.encoder_b[h] + dot(self.encoder_w.row(h), u.row(t));
            }
        }
        let mut layer_tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, tape) = layer.forward_tape(&x, view)?;
            x = next;
            layer_tapes.push(tape);
        }
        let pooled = match self.pooling {
            Pooling::MeanOverTime => DenseMatrix::from_fn(1, hdim, |_, h| {
                (0..len).map(|t| x[(t, h)]).sum::<f64>() / len as f64
            }),
            Pooling::LastStep => DenseMatrix::from_fn(1, hdim, |_, h| x[(len - 1, h)]),
            Pooling::Sequence => x.clone(),
        };
        let out = DenseMatrix::from_fn(pooled.rows(), self.classes(), |t, k| {
            self.decoder_b[k] + dot(self.decoder_w.row(k), pooled.row(t))
        });
        if !out.is_finite() {
            return Err(LsslError::NonFinite("model output".into()));
        }
        let tape = ModelTape { layer_tapes, pooled };
        Ok((out, tape))
    }

    /// `T_out x classes` output for one sequence (`T_out = 1` unless pooling
    /// is `Sequence`).
    pub fn forward(&self, u: &DenseMatrix, view: ViewMode) -> Result<DenseMatrix> {
        Ok(self.forward_tape(u, view)?.0)
    }

    /// Visit every trainable tensor in a fixed order. In `Full` mode each
    /// layer contributes `log dt` and `A` ahead of its other tensors.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.encoder_w.as_mut_slice());
        f(&mut self.encoder_b);
        for layer in &mut self.layers {
            if layer.mode == TrainMode::Full {
                let logs: Vec<f64> = layer.dt.iter().map(|v| v.ln()).collect();
                let mut work = logs.clone();
                f(&mut work);
                let mut touched = false;
                for ((dt, old), new) in layer.dt.iter_mut().zip(&logs).zip(&work) {
                    if old.to_bits() != new.to_bits() {
                        *dt = new.exp();
                        touched = true;
                    }
                }
                if let StateMatrix::Dense(a) = &mut layer.a {
                    let before = a.clone();
                    f(a.as_mut_slice());
                    touched |= *a != before;
                }
                if touched {
                    layer.invalidate_cache();
                }
            }
            for c in &mut layer.c {
                f(c.as_mut_slice());
            }
            f(layer.d.as_mut_slice());
            f(layer.ff_weight.as_mut_slice());
            f(&mut layer.ff_bias);
            f(&mut layer.norm_gain);
            f(&mut layer.norm_bias);
        }
        f(self.decoder_w.as_mut_slice());
        f(&mut self.decoder_b);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.clone().visit_params(&mut |t| n += t.len());
        n
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().visit_params(&mut |t| out.extend_from_slice(t));
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        dim_check(p.len() == self.param_count(), || {
            format!("{} values for {} parameters", p.len(), self.param_count())
        })?;
        let mut at = 0;
        self.visit_params(&mut |t| {
            t.copy_from_slice(&p[at..at + t.len()]);
            at += t.len();
        });
        Ok(())
    }
}

/// Outputs for every sequence in the batch.
pub fn model_forward(model: &LsslModel, batch: &SequenceBatch, view: ViewMode) -> Result<Vec<DenseMatrix>> {
    batch.data.iter().map(|u| model.forward(u, view)).collect()
}
