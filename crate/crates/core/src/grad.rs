//! Reverse-mode gradients for the model, the recurrent `dt`/`A` adjoint,
//! Adam, and a finite-difference checker.

use crate::error::{dim_check, LsslError, Result};
use crate::layer::ops::{gelu_grad, layer_norm_backward, ConvPlan};
use crate::layer::{Labels, LayerTape, LsslLayer, LsslModel, NormPlacement, Pooling, SequenceBatch, StateMatrix, TrainMode, ViewMode};
use crate::linalg::{dot, DenseMatrix, Lu};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    /// Present in `Full` mode.
    pub log_dt: Option<Vec<f64>>,
    pub a: Option<DenseMatrix>,
    pub c: Vec<DenseMatrix>,
    pub d: DenseMatrix,
    pub ff_weight: DenseMatrix,
    pub ff_bias: Vec<f64>,
    pub norm_gain: Vec<f64>,
    pub norm_bias: Vec<f64>,
}

/// One gradient tensor per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub encoder_w: DenseMatrix,
    pub encoder_b: Vec<f64>,
    pub layers: Vec<LayerGrads>,
    pub decoder_w: DenseMatrix,
    pub decoder_b: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &LsslModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let (h, n, m) = (l.features(), l.order(), l.channels());
                let full = l.mode() == TrainMode::Full;
                LayerGrads {
                    log_dt: full.then(|| vec![0.0; h]),
                    a: full.then(|| DenseMatrix::zeros(n, n)),
                    c: vec![DenseMatrix::zeros(m, n); h],
                    d: DenseMatrix::zeros(h, m),
                    ff_weight: DenseMatrix::zeros(h, h * m),
                    ff_bias: vec![0.0; h],
                    norm_gain: vec![0.0; h],
                    norm_bias: vec![0.0; h],
                }
            })
            .collect();
        Self {
            encoder_w: DenseMatrix::zeros(model.encoder_w.rows(), model.encoder_w.cols()),
            encoder_b: vec![0.0; model.encoder_b.len()],
            layers,
            decoder_w: DenseMatrix::zeros(model.decoder_w.rows(), model.decoder_w.cols()),
            decoder_b: vec![0.0; model.decoder_b.len()],
        }
    }

    /// Same tensor order as `LsslModel::visit_params`.
    pub fn visit(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.encoder_w.as_mut_slice());
        f(&mut self.encoder_b);
        for l in &mut self.layers {
            if let Some(v) = &mut l.log_dt {
                f(v);
            }
            if let Some(a) = &mut l.a {
                f(a.as_mut_slice());
            }
            for c in &mut l.c {
                f(c.as_mut_slice());
            }
            f(l.d.as_mut_slice());
            f(l.ff_weight.as_mut_slice());
            f(&mut l.ff_bias);
            f(&mut l.norm_gain);
            f(&mut l.norm_bias);
        }
        f(self.decoder_w.as_mut_slice());
        f(&mut self.decoder_b);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().visit(&mut |t| out.extend_from_slice(t));
        out
    }

    fn add_assign(&mut self, other: &Self) {
        let flat = other.flatten();
        let mut at = 0;
        self.visit(&mut |t| {
            for v in t.iter_mut() {
                *v += flat[at];
                at += 1;
            }
        });
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Sum by a fixed pairwise tree, so the result does not depend on how the
/// batch is later split or scheduled.
fn tree_sum(mut parts: Vec<GradientSet>) -> Option<GradientSet> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add_assign(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

/// Debug hooks for mutation testing of the checker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultInjection {
    /// Flip the sign of every `dt` gradient.
    pub flip_dt_sign: bool,
}

/// Loss of one output and its gradient, already divided by `batch`.
fn loss_and_grad(out: &DenseMatrix, sample: usize, labels: &Labels, loss: LossSpec, batch: usize) -> Result<(f64, DenseMatrix)> {
    let scale = 1.0 / batch as f64;
    match (loss, labels) {
        (LossSpec::CrossEntropy, Labels::Classes(c)) => {
            dim_check(out.rows() == 1, || "cross-entropy needs a pooled output".into())?;
            let k = c[sample];
            if k >= out.cols() {
                return Err(LsslError::InvalidParameter(format!("label {k} for {} classes", out.cols())));
            }
            let logits = out.row(0);
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            let grad = DenseMatrix::from_fn(1, out.cols(), |_, j| {
                let p = (logits[j] - lse).exp();
                scale * (p - if j == k { 1.0 } else { 0.0 })
            });
            Ok((lse - logits[k], grad))
        }
        (LossSpec::Mse, Labels::Targets(t)) => {
            let target = &t[sample];
            dim_check(target.rows() == out.rows() && target.cols() == out.cols(), || {
                format!("target {}x{} for output {}x{}", target.rows(), target.cols(), out.rows(), out.cols())
            })?;
            let count = (out.rows() * out.cols()) as f64;
            let mut l = 0.0;
            let grad = DenseMatrix::from_fn(out.rows(), out.cols(), |i, j| {
                let e = out[(i, j)] - target[(i, j)];
                l += e * e;
                2.0 * e * scale / count
            });
            Ok((l / count, grad))
        }
        _ => Err(LsslError::InvalidParameter("cross-entropy needs class labels, MSE needs real targets".into())),
    }
}

/// Mean loss over the batch (no gradients).
pub fn batch_loss(model: &LsslModel, batch: &SequenceBatch, loss: LossSpec, view: ViewMode) -> Result<f64> {
    if batch.is_empty() {
        return Err(LsslError::InvalidParameter("empty batch".into()));
    }
    let mut parts = Vec::with_capacity(batch.len());
    for (i, u) in batch.data.iter().enumerate() {
        let out = model.forward(u, view)?;
        parts.push(loss_and_grad(&out, i, &batch.labels, loss, batch.len())?.0);
    }
    let l = pairwise_sum(&parts) / batch.len() as f64;
    if !l.is_finite() {
        return Err(LsslError::NonFinite("loss".into()));
    }
    Ok(l)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Mean loss and its gradient with respect to every trainable parameter.
pub fn model_backward(model: &LsslModel, batch: &SequenceBatch, loss: LossSpec) -> Result<(f64, GradientSet)> {
    model_backward_with(model, batch, loss, FaultInjection::default())
}

pub fn model_backward_with(
    model: &LsslModel,
    batch: &SequenceBatch,
    loss: LossSpec,
    fault: FaultInjection,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(LsslError::InvalidParameter("empty batch".into()));
    }
    let mut losses = Vec::with_capacity(batch.len());
    let mut parts = Vec::with_capacity(batch.len());
    for (i, u) in batch.data.iter().enumerate() {
        let (out, tape) = model.forward_tape(u, ViewMode::Conv)?;
        let (l, d_out) = loss_and_grad(&out, i, &batch.labels, loss, batch.len())?;
        losses.push(l);
        let mut g = GradientSet::zeros_like(model);

        // decoder
        let pooled = &tape.pooled;
        let hdim = model.features();
        let mut d_pooled = DenseMatrix::zeros(pooled.rows(), hdim);
        for t in 0..pooled.rows() {
            for k in 0..model.classes() {
                let dk = d_out[(t, k)];
                g.decoder_b[k] += dk;
                for h in 0..hdim {
                    g.decoder_w[(k, h)] += dk * pooled[(t, h)];
                    d_pooled[(t, h)] += dk * model.decoder_w[(k, h)];
                }
            }
        }
        let len = u.rows();
        let mut dx = match model.pooling {
            Pooling::Sequence => d_pooled,
            Pooling::MeanOverTime => DenseMatrix::from_fn(len, hdim, |_, h| d_pooled[(0, h)] / len as f64),
            Pooling::LastStep => DenseMatrix::from_fn(len, hdim, |t, h| if t + 1 == len { d_pooled[(0, h)] } else { 0.0 }),
        };

        for (li, layer) in model.layers.iter().enumerate().rev() {
            dx = layer_backward(layer, &tape.layer_tapes[li], &dx, &mut g.layers[li], fault)?;
        }

        // encoder
        for t in 0..len {
            for h in 0..hdim {
                let d = dx[(t, h)];
                g.encoder_b[h] += d;
                for (j, uj) in u.row(t).iter().enumerate() {
                    g.encoder_w[(h, j)] += d * uj;
                }
            }
        }
        parts.push(g);
    }
    let l = pairwise_sum(&losses) / batch.len() as f64;
    let grads = tree_sum(parts).expect("non-empty batch");
    if !l.is_finite() || !grads.is_finite() {
        return Err(LsslError::NonFinite("loss or gradient".into()));
    }
    Ok((l, grads))
}

/// Backward through one layer; returns the gradient of its input.
fn layer_backward(
    layer: &LsslLayer,
    tape: &LayerTape,
    d_out: &DenseMatrix,
    g: &mut LayerGrads,
    fault: FaultInjection,
) -> Result<DenseMatrix> {
    let (len, hdim, mdim) = (d_out.rows(), layer.features(), layer.channels());
    let d_res = match (&tape.post_norm, layer.norm) {
        (Some(nt), NormPlacement::PostNorm) => {
            let (dr, dg, db) = layer_norm_backward(nt, &layer.norm_gain, d_out);
            add_into(&mut g.norm_gain, &dg);
            add_into(&mut g.norm_bias, &db);
            dr
        }
        _ => d_out.clone(),
    };
    let mut d_in = d_res.clone();

    // feedforward and GeLU
    let mut d_pre = DenseMatrix::zeros(len, hdim * mdim);
    for t in 0..len {
        let act = tape.act.row(t);
        for h in 0..hdim {
            let d = d_res[(t, h)];
            if d == 0.0 {
                continue;
            }
            g.ff_bias[h] += d;
            let w = layer.ff_weight.row(h);
            let gw = g.ff_weight.row_mut(h);
            let dp = d_pre.row_mut(t);
            for j in 0..hdim * mdim {
                gw[j] += d * act[j];
                dp[j] += d * w[j];
            }
        }
        let pre = tape.pre_act.row(t);
        for (dp, &p) in d_pre.row_mut(t).iter_mut().zip(pre) {
            *dp *= gelu_grad(p);
        }
    }

    // SSM stage
    let cache = layer.krylov(len)?;
    let plan = ConvPlan::new(len)?;
    let mut d_ssm_in = DenseMatrix::zeros(len, hdim);
    for h in 0..hdim {
        let s = tape.ssm_in.column(h);
        let fs = plan.spectrum(&s);
        let mut ds = vec![0.0; len];
        let mut dy_all = DenseMatrix::zeros(mdim, len);
        for m in 0..mdim {
            let dy: Vec<f64> = (0..len).map(|t| d_pre[(t, h * mdim + m)]).collect();
            let dm = layer.d[(h, m)];
            g.d[(h, m)] += dot(&dy, &s);
            let fdy = plan.spectrum(&dy);
            let d_taps = plan.correlate_spectra(&fdy, &fs);
            let fk = plan.spectrum(&layer.taps(&cache, h, m));
            let back = plan.correlate_spectra(&fdy, &fk);
            for t in 0..len {
                ds[t] += back[t] + dm * dy[t];
            }
            let kry = &cache.krylov[h];
            let gc = g.c[h].row_mut(m);
            for (n, gcn) in gc.iter_mut().enumerate() {
                *gcn += dot(&d_taps, kry.row(n));
            }
            dy_all.row_mut(m).copy_from_slice(&dy);
        }
        if layer.mode() == TrainMode::Full {
            let (d_dt, d_a) = recurrent_param_grads(layer, h, &s, &dy_all)?;
            let sign = if fault.flip_dt_sign { -1.0 } else { 1.0 };
            if let Some(ld) = &mut g.log_dt {
                ld[h] += sign * d_dt * layer.dt()[h];
            }
            if let Some(ga) = &mut g.a {
                *ga = ga.add(&d_a)?;
            }
        }
        for t in 0..len {
            d_ssm_in[(t, h)] = ds[t];
        }
    }

    match (&tape.pre_norm, layer.norm) {
        (Some(nt), NormPlacement::PreNorm) => {
            let (du, dg, db) = layer_norm_backward(nt, &layer.norm_gain, &d_ssm_in);
            add_into(&mut g.norm_gain, &dg);
            add_into(&mut g.norm_bias, &db);
            add_matrix(&mut d_in, &du);
        }
        _ => add_matrix(&mut d_in, &d_ssm_in),
    }
    Ok(d_in)
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn add_matrix(a: &mut DenseMatrix, b: &DenseMatrix) {
    add_into(a.as_mut_slice(), b.as_slice());
}

/// Gradient of `sum_t dy[:, t] . y_t` with respect to `dt[h]` and `A`,
/// through the bilinear recurrence
/// `x_t = B(A, -dt/2, F(A, dt/2, x_{t-1}) + dt b u_t)`, `y_t = C x_t + D u_t`.
/// `dy` is `M x L`.
pub fn recurrent_param_grads(layer: &LsslLayer, h: usize, u: &[f64], dy: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    if layer.mode() != TrainMode::Full {
        return Err(LsslError::InvalidParameter("recurrent dt/A gradients need Full mode".into()));
    }
    let a = match layer.state_matrix() {
        StateMatrix::Dense(a) => a,
        StateMatrix::Structured(_) => unreachable!("Full mode densifies A"),
    };
    let (n, len) = (layer.order(), u.len());
    dim_check(h < layer.features() && dy.rows() == layer.channels() && dy.cols() == len, || {
        format!("feature {h}, dy {}x{}, input {len}", dy.rows(), dy.cols())
    })?;
    let dt = layer.dt()[h];
    let b = layer.b().row(h);
    let half = 0.5 * dt;
    let lu = Lu::new(&a.shifted_identity(-half))?;

    // states x_{-1} = 0, x_0, ..., x_{L-1}
    let mut xs = vec![vec![0.0; n]];
    let mut ax = vec![0.0; n];
    for &ut in u {
        let x = xs.last().expect("seeded");
        a.matvec_into(x, &mut ax);
        let w: Vec<f64> = (0..n).map(|i| x[i] + half * ax[i] + dt * b[i] * ut).collect();
        xs.push(lu.solve(&w));
    }

    let mut d_dt = 0.0;
    let mut d_a = DenseMatrix::zeros(n, n);
    let mut g = vec![0.0; n];
    let mut a_next = vec![0.0; n];
    a.matvec_into(&xs[len], &mut a_next);
    let mut a_prev = vec![0.0; n];
    let c = &layer.c[h];
    for t in (0..len).rev() {
        for m in 0..dy.rows() {
            let dym = dy[(m, t)];
            if dym != 0.0 {
                for (gi, ci) in g.iter_mut().zip(c.row(m)) {
                    *gi += dym * ci;
                }
            }
        }
        // x_t = (I - dt/2 A)^-1 w_t
        let dw = lu.solve_transpose(&g);
        let (x_t, x_prev) = (&xs[t + 1], &xs[t]);
        a.matvec_into(x_prev, &mut a_prev);
        d_dt += 0.5 * (dot(&dw, &a_next) + dot(&dw, &a_prev)) + u[t] * dot(b, &dw);
        for i in 0..n {
            let s = half * dw[i];
            if s != 0.0 {
                let row = d_a.row_mut(i);
                for j in 0..n {
                    row[j] += s * (x_t[j] + x_prev[j]);
                }
            }
        }
        // w_t = (I + dt/2 A) x_{t-1} + ...
        let atdw = a.matvec_transpose(&dw);
        for i in 0..n {
            g[i] = dw[i] + half * atdw[i];
        }
        std::mem::swap(&mut a_next, &mut a_prev);
    }
    Ok((d_dt, d_a))
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One Adam update with bias correction.
pub fn sgd_adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    dim_check(params.len() == grads.len() && state.m.len() == params.len() && state.v.len() == params.len(), || {
        format!("{} params, {} grads, state {}", params.len(), grads.len(), state.m.len())
    })?;
    if !(lr > 0.0) {
        return Err(LsslError::InvalidParameter(format!("learning rate {lr} must be positive")));
    }
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Adam step applied to the model's trainable parameters.
pub fn apply_adam(model: &mut LsslModel, grads: &GradientSet, state: &mut AdamState, lr: f64) -> Result<()> {
    let mut p = model.flat_params();
    sgd_adam_step(&mut p, &grads.flatten(), state, lr, (0.9, 0.999), 1e-8)?;
    model.set_flat_params(&p)
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Denominator floor for relative errors of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Check up to `per_tensor` random coordinates of every trainable tensor
/// with `h = 1e-5 max(1, |theta|)`.
pub fn gradcheck_model(
    model: &LsslModel,
    batch: &SequenceBatch,
    loss: LossSpec,
    per_tensor: usize,
    seed: u64,
    fault: FaultInjection,
) -> Result<GradcheckReport> {
    let (_, grads) = model_backward_with(model, batch, loss, fault)?;
    let analytic = grads.flatten();
    let params = model.flat_params();
    let mut sizes = Vec::new();
    model.clone().visit_params(&mut |t| sizes.push(t.len()));
    let mut r = rng::stream(seed, 77);
    let mut picks = Vec::new();
    let mut start = 0;
    for size in sizes {
        if size <= per_tensor {
            picks.extend(start..start + size);
        } else {
            let mut chosen: Vec<usize> = (0..size).collect();
            for i in 0..per_tensor {
                let j = i + (rng::uniform(&mut r, 0.0, (size - i) as f64) as usize).min(size - i - 1);
                chosen.swap(i, j);
            }
            picks.extend(chosen[..per_tensor].iter().map(|&c| start + c));
        }
        start += size;
    }
    let mut work = model.clone();
    let mut report = GradcheckReport { checked: 0, max_rel_err: 0.0, worst_index: 0 };
    for &i in &picks {
        let h = 1e-5 * params[i].abs().max(1.0);
        let mut p = params.clone();
        p[i] = params[i] + h;
        work.set_flat_params(&p)?;
        let lp = batch_loss(&work, batch, loss, ViewMode::Conv)?;
        p[i] = params[i] - h;
        work.set_flat_params(&p)?;
        let lm = batch_loss(&work, batch, loss, ViewMode::Conv)?;
        let fd = (lp - lm) / (2.0 * h);
        let e = relative_error(analytic[i], fd);
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
