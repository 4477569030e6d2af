//! The LSSL layer (H independent single-input SSMs with M output channels
//! each, followed by GeLU, a feedforward map, residual and layer norm) and
//! the stacked model.

mod checkpoint;
mod model;
pub(crate) mod ops;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use model::{model_forward, Labels, LsslModel, ModelConfig, Pooling, SequenceBatch};

use std::sync::{Arc, Mutex};

use crate::disc::{bilinear_step_structured, gbt_discretize};
use crate::error::{dim_check, LsslError, Result};
use crate::hippo::{HippoFamily, StructuredStateMatrix};
use crate::kernel::krylov_matrix;
use crate::linalg::{dot, DenseMatrix};
use crate::rng;
use ops::{gelu, layer_norm, ConvPlan, NormTape};

/// Layer state matrix (already in its stable, negated form).
#[derive(Debug, Clone, PartialEq)]
pub enum StateMatrix {
    Dense(DenseMatrix),
    Structured(StructuredStateMatrix),
}

impl StateMatrix {
    pub fn order(&self) -> usize {
        match self {
            StateMatrix::Dense(a) => a.rows(),
            StateMatrix::Structured(s) => s.order(),
        }
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        match self {
            StateMatrix::Dense(a) => Ok(a.clone()),
            StateMatrix::Structured(s) => s.to_dense(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// `A`, `B`, `dt` frozen; only `C`, `D` and the surrounding weights train.
    Fixed,
    /// Additionally trains `log dt` and a dense `A`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPlacement {
    PreNorm,
    PostNorm,
}

/// Which view computes the SSM stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    Conv,
    Rec,
}

/// Per-feature Krylov matrices for one sequence length.
#[derive(Debug)]
pub(crate) struct KrylovCache {
    pub len: usize,
    pub krylov: Vec<DenseMatrix>,
}

#[derive(Debug)]
pub struct LsslLayer {
    a: StateMatrix,
    b: DenseMatrix,
    dt: Vec<f64>,
    /// One `M x N` output matrix per feature.
    pub c: Vec<DenseMatrix>,
    /// `H x M` skip weights.
    pub d: DenseMatrix,
    /// `H x (H M)`, input index `h * M + m`.
    pub ff_weight: DenseMatrix,
    pub ff_bias: Vec<f64>,
    pub norm_gain: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub norm: NormPlacement,
    mode: TrainMode,
    cache: Mutex<Option<Arc<KrylovCache>>>,
}

impl Clone for LsslLayer {
    fn clone(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            dt: self.dt.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
            ff_weight: self.ff_weight.clone(),
            ff_bias: self.ff_bias.clone(),
            norm_gain: self.norm_gain.clone(),
            norm_bias: self.norm_bias.clone(),
            norm: self.norm,
            mode: self.mode,
            cache: Mutex::new(self.cache.lock().expect("cache lock").clone()),
        }
    }
}

impl PartialEq for LsslLayer {
    fn eq(&self, o: &Self) -> bool {
        self.a == o.a
            && self.b == o.b
            && self.dt == o.dt
            && self.c == o.c
            && self.d == o.d
            && self.ff_weight == o.ff_weight
            && self.ff_bias == o.ff_bias
            && self.norm_gain == o.norm_gain
            && self.norm_bias == o.norm_bias
            && self.norm == o.norm
            && self.mode == o.mode
    }
}

/// Intermediate values of one layer on one sequence, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct LayerTape {
    pub ssm_in: DenseMatrix,
    pub pre_norm: Option<NormTape>,
    pub pre_act: DenseMatrix,
    pub act: DenseMatrix,
    pub post_norm: Option<NormTape>,
}

/// Layer with `A = -HiPPO(family)`, HiPPO `b` for every feature,
/// log-uniform `dt`, `C ~ U(-1/sqrt N, 1/sqrt N)`, `D = 0`, and a fan-in
/// scaled feedforward map. All draws come from streams of `seed`.
pub fn init_layer(
    h: usize,
    n: usize,
    m: usize,
    dt_min: f64,
    dt_max: f64,
    seed: u64,
    family: HippoFamily,
) -> Result<LsslLayer> {
    if h == 0 || n == 0 || m == 0 {
        return Err(LsslError::InvalidParameter(format!("H={h}, N={n}, M={m} must all be positive")));
    }
    if !(dt_min > 0.0 && dt_min <= dt_max && dt_max.is_finite()) {
        return Err(LsslError::InvalidParameter(format!("dt range [{dt_min}, {dt_max}]")));
    }
    let hippo = family.build(n)?;
    let a = match family.structured(n) {
        Some(s) => StateMatrix::Structured(s?.negated()),
        None => StateMatrix::Dense(hippo.a.scale(-1.0)),
    };
    let b = DenseMatrix::from_fn(h, n, |_, j| hippo.b[j]);

    let dt = init_dt(h, dt_min, dt_max, seed);

    let mut r_c = rng::stream(seed, 1);
    let bound = 1.0 / (n as f64).sqrt();
    let c = (0..h)
        .map(|_| DenseMatrix::from_fn(m, n, |_, _| rng::uniform(&mut r_c, -bound, bound)))
        .collect();

    let mut r_ff = rng::stream(seed, 2);
    let fan = 1.0 / ((h * m) as f64).sqrt();
    let ff_weight = DenseMatrix::from_fn(h, h * m, |_, _| rng::uniform(&mut r_ff, -fan, fan));

    Ok(LsslLayer {
        a,
        b,
        dt,
        c,
        d: DenseMatrix::zeros(h, m),
        ff_weight,
        ff_bias: vec![0.0; h],
        norm_gain: vec![1.0; h],
        norm_bias: vec![0.0; h],
        norm: NormPlacement::PostNorm,
        mode: TrainMode::Fixed,
        cache: Mutex::new(None),
    })
}

/// `h` step sizes `exp(U(log dt_min, log dt_max))`.
pub fn init_dt(h: usize, dt_min: f64, dt_max: f64, seed: u64) -> Vec<f64> {
    if dt_min == dt_max {
        return vec![dt_min; h];
    }
    let mut r = rng::stream(seed, 0);
    let (lo, hi) = (dt_min.ln(), dt_max.ln());
    (0..h).map(|_| rng::uniform(&mut r, lo, hi).exp()).collect()
}

impl LsslLayer {
    /// Assemble a layer from explicit parameters (checkpoint loading, tests).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        a: StateMatrix,
        b: DenseMatrix,
        dt: Vec<f64>,
        c: Vec<DenseMatrix>,
        d: DenseMatrix,
        ff_weight: DenseMatrix,
        ff_bias: Vec<f64>,
        norm_gain: Vec<f64>,
        norm_bias: Vec<f64>,
        norm: NormPlacement,
        mode: TrainMode,
    ) -> Result<Self> {
        let h = dt.len();
        let n = a.order();
        let m = d.cols();
        dim_check(h > 0 && n > 0 && m > 0, || "empty layer".into())?;
        dim_check(b.rows() == h && b.cols() == n, || format!("B is {}x{}", b.rows(), b.cols()))?;
        dim_check(c.len() == h && c.iter().all(|ch| ch.rows() == m && ch.cols() == n), || {
            format!("C must be {h} matrices of {m}x{n}")
        })?;
        dim_check(d.rows() == h, || format!("D has {} rows", d.rows()))?;
        dim_check(ff_weight.rows() == h && ff_weight.cols() == h * m, || {
            format!("ff weight is {}x{}", ff_weight.rows(), ff_weight.cols())
        })?;
        dim_check(ff_bias.len() == h && norm_gain.len() == h && norm_bias.len() == h, || {
            "bias / norm vectors must have H entries".into()
        })?;
        check_dt(&dt)?;
        let mut layer = Self {
            a,
            b,
            dt,
            c,
            d,
            ff_weight,
            ff_bias,
            norm_gain,
            norm_bias,
            norm,
            mode: TrainMode::Fixed,
            cache: Mutex::new(None),
        };
        layer.set_mode(mode)?;
        Ok(layer)
    }

    pub fn features(&self) -> usize {
        self.dt.len()
    }

    pub fn order(&self) -> usize {
        self.a.order()
    }

    pub fn channels(&self) -> usize {
        self.d.cols()
    }

    pub fn state_matrix(&self) -> &StateMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn dt(&self) -> &[f64] {
        &self.dt
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    /// Switching to `Full` densifies a structured `A` so it can be trained.
    pub fn set_mode(&mut self, mode: TrainMode) -> Result<()> {
        if mode == TrainMode::Full {
            if let StateMatrix::Structured(s) = &self.a {
                self.a = StateMatrix::Dense(s.to_dense()?);
            }
        }
        self.mode = mode;
        Ok(())
    }

    /// Replace the step sizes; drops cached kernels.
    pub fn set_dt(&mut self, dt: Vec<f64>) -> Result<()> {
        dim_check(dt.len() == self.features(), || format!("{} step sizes for H = {}", dt.len(), self.features()))?;
        check_dt(&dt)?;
        self.dt = dt;
        self.invalidate_cache();
        Ok(())
    }

    /// Replace `A`; drops cached kernels.
    pub fn set_state_matrix(&mut self, a: StateMatrix) -> Result<()> {
        dim_check(a.order() == self.order(), || format!("A of order {} for N = {}", a.order(), self.order()))?;
        self.a = a;
        self.invalidate_cache();
        Ok(())
    }

    pub fn invalidate_cache(&self) {
        *self.cache.lock().expect("cache lock") = None;
    }

    /// Discretized `(a_bar, b_bar)` for feature `h`.
    pub fn discretized(&self, h: usize) -> Result<(DenseMatrix, Vec<f64>)> {
        let (ab, bb) = gbt_discretize(&self.a.to_dense()?, self.b.row(h), self.dt[h], 0.5)?;
        Ok((ab, bb.into_vec()))
    }

    /// Krylov matrices for length `len`, computed once and shared.
    pub(crate) fn krylov(&self, len: usize) -> Result<Arc<KrylovCache>> {
        let mut guard = self.cache.lock().expect("cache lock");
        if let Some(c) = guard.as_ref() {
            if c.len == len {
                return Ok(Arc::clone(c));
            }
        }
        let dense = self.a.to_dense()?;
        let krylov = (0..self.features())
            .map(|h| {
                let (ab, bb) = gbt_discretize(&dense, self.b.row(h), self.dt[h], 0.5)?;
                krylov_matrix(&ab, &bb, len)
            })
            .collect::<Result<Vec<_>>>()?;
        let cache = Arc::new(KrylovCache { len, krylov });
        *guard = Some(Arc::clone(&cache));
        Ok(cache)
    }

    /// Convolution taps for feature `h`, channel `m`.
    pub(crate) fn taps(&self, cache: &KrylovCache, h: usize, m: usize) -> Vec<f64> {
        let k = &cache.krylov[h];
        let c = self.c[h].row(m);
        let mut out = vec![0.0; cache.len];
        for (n, &cn) in c.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(k.row(n)) {
                *o += cn * v;
            }
        }
        out
    }

    /// Length-`len` taps of every feature and channel, feature-major.
    pub fn kernels(&self, len: usize) -> Result<Vec<Vec<f64>>> {
        if len == 0 {
            return Err(LsslError::InvalidParameter("kernel length must be positive".into()));
        }
        let cache = self.krylov(len)?;
        let mut out = Vec::with_capacity(self.features() * self.channels());
        for h in 0..self.features() {
            for m in 0..self.channels() {
                out.push(self.taps(&cache, h, m));
            }
        }
        Ok(out)
    }

    fn check_input(&self, u: &DenseMatrix) -> Result<()> {
        dim_check(u.cols() == self.features() && u.rows() > 0, || {
            format!("layer input is {}x{}, expected L x {}", u.rows(), u.cols(), self.features())
        })
    }

    /// SSM stage: `L x (H M)` outputs of every feature/channel.
    fn ssm_stage(&self, s: &DenseMatrix, view: ViewMode) -> Result<DenseMatrix> {
        let (len, hdim, mdim) = (s.rows(), self.features(), self.channels());
        let mut y = DenseMatrix::zeros(len, hdim * mdim);
        match view {
            ViewMode::Conv => {
                let cache = self.krylov(len)?;
                let plan = ConvPlan::new(len)?;
                for h in 0..hdim {
                    let col = s.column(h);
                    let fs = plan.spectrum(&col);
                    for m in 0..mdim {
                        let fk = plan.spectrum(&self.taps(&cache, h, m));
                        let conv = plan.convolve_spectra(&fs, &fk);
                        let dm = self.d[(h, m)];
                        for t in 0..len {
                            y[(t, h * mdim + m)] = conv[t] + dm * col[t];
                        }
                    }
                }
            }
            ViewMode::Rec => {
                for h in 0..hdim {
                    let col = s.column(h);
                    let n = self.order();
                    let mut x = vec![0.0; n];
                    let emit = |y: &mut DenseMatrix, t: usize, x: &[f64]| {
                        for m in 0..mdim {
                            y[(t, h * mdim + m)] = dot(self.c[h].row(m), x) + self.d[(h, m)] * col[t];
                        }
                    };
                    match &self.a {
                        StateMatrix::Structured(sa) => {
                            for t in 0..len {
                                x = bilinear_step_structured(sa, self.b.row(h), self.dt[h], &x, col[t])?.into_vec();
                                emit(&mut y, t, &x);
                            }
                        }
                        StateMatrix::Dense(_) => {
                            let (ab, bb) = self.discretized(h)?;
                            let mut next = vec![0.0; n];
                            for t in 0..len {
                                ab.matvec_into(&x, &mut next);
                                for (xi, bi) in next.iter_mut().zip(&bb) {
                                    *xi += bi * col[t];
                                }
                                std::mem::swap(&mut x, &mut next);
                                emit(&mut y, t, &x);
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub(crate) fn forward_tape(&self, u: &DenseMatrix, view: ViewMode) -> Result<(DenseMatrix, LayerTape)> {
        self.check_input(u)?;
        let (ssm_in, pre_norm) = match self.norm {
            NormPlacement::PreNorm => {
                let (z, t) = layer_norm(u, &self.norm_gain, &self.norm_bias);
                (z, Some(t))
            }
            NormPlacement::PostNorm => (u.clone(), None),
        };
        let pre_act = self.ssm_stage(&ssm_in, view)?;
        let act = DenseMatrix::from_fn(pre_act.rows(), pre_act.cols(), |i, j| gelu(pre_act[(i, j)]));
        let len = u.rows();
        let mut res = DenseMatrix::zeros(len, self.features());
        for t in 0..len {
            let g = act.row(t);
            let out = res.row_mut(t);
            for (hh, o) in out.iter_mut().enumerate() {
                *o = u[(t, hh)] + self.ff_bias[hh] + dot(self.ff_weight.row(hh), g);
            }
        }
        let (out, post_norm) = match self.norm {
            NormPlacement::PostNorm => {
                let (z, t) = layer_norm(&res, &self.norm_gain, &self.norm_bias);
                (z, Some(t))
            }
            NormPlacement::PreNorm => (res, None),
        };
        if !out.is_finite() {
            return Err(LsslError::NonFinite("layer output".into()));
        }
        Ok((out, LayerTape { ssm_in, pre_norm, pre_act, act, post_norm }))
    }

    /// One sequence, `L x H` in and out.
    pub fn forward(&self, u: &DenseMatrix, view: ViewMode) -> Result<DenseMatrix> {
        Ok(self.forward_tape(u, view)?.0)
    }
}

fn check_dt(dt: &[f64]) -> Result<()> {
    if let Some(bad) = dt.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(LsslError::InvalidParameter(format!("step size {bad} must be positive")));
    }
    Ok(())
}

/// Applies `layer.forward` to every sequence of a batch.
pub fn layer_forward(layer: &LsslLayer, u: &[DenseMatrix], view: ViewMode) -> Result<Vec<DenseMatrix>> {
    u.iter().map(|x| layer.forward(x, view)).collect()
}

/// Multiply every step size by `factor`.
pub fn adapt_timescale(model: &mut LsslModel, factor: f64) -> Result<()> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(LsslError::InvalidParameter(format!("timescale factor {factor} must be positive")));
    }
    for layer in &mut model.layers {
        let dt = layer.dt.iter().map(|v| v * factor).collect();
        layer.set_dt(dt)?;
    }
    Ok(())
}
