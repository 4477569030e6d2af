use super::*;
use crate::disc::{backward_diff_grad, forward_diff_grad, DiscreteSSM};
use crate::hippo::HippoFamily;
use crate::kernel::apply_recurrent;
use crate::layer::{init_layer, ModelConfig};

fn random_seq(seed: u64, len: usize, width: usize) -> DenseMatrix {
    let mut r = rng::stream(seed, 5);
    DenseMatrix::from_fn(len, width, |_, _| rng::uniform(&mut r, -1.0, 1.0))
}

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        input_dim: 2,
        h: 8,
        n: 8,
        m: 1,
        depth: 2,
        classes: 3,
        dt_min: 1e-2,
        dt_max: 1e-1,
        seed,
        ..ModelConfig::default()
    }
}

fn class_batch(seed: u64, count: usize, len: usize) -> SequenceBatch {
    let data = (0..count).map(|i| random_seq(seed * 100 + i as u64, len, 2)).collect();
    SequenceBatch::new(data, Labels::Classes((0..count).map(|i| i % 3).collect())).unwrap()
}

fn target_batch(seed: u64, count: usize, len: usize, rows: usize) -> SequenceBatch {
    let data = (0..count).map(|i| random_seq(seed * 100 + i as u64, len, 2)).collect();
    let targets = (0..count).map(|i| random_seq(seed * 100 + 50 + i as u64, rows, 3)).collect();
    SequenceBatch::new(data, Labels::Targets(targets)).unwrap()
}

#[test]
fn cross_entropy_bias_gradient_closed_form() {
    let mut model = LsslModel::new(&tiny_config(1)).unwrap();
    model.decoder_w = DenseMatrix::zeros(3, 8);
    model.decoder_b = vec![0.2, -0.4, 1.0];
    let batch = class_batch(1, 4, 16);
    let (loss, g) = model_backward(&model, &batch, LossSpec::CrossEntropy).unwrap();
    let z: f64 = model.decoder_b.iter().map(|v| v.exp()).sum();
    let p: Vec<f64> = model.decoder_b.iter().map(|v| v.exp() / z).collect();
    let labels = [0usize, 1, 2, 0];
    for k in 0..3 {
        let want = labels.iter().map(|&y| p[k] - if y == k { 1.0 } else { 0.0 }).sum::<f64>() / 4.0;
        assert!((g.decoder_b[k] - want).abs() < 1e-14);
    }
    let want_loss = labels.iter().map(|&y| -p[y].ln()).sum::<f64>() / 4.0;
    assert!((loss - want_loss).abs() < 1e-14);
    // nothing upstream of a zero decoder receives gradient
    assert_eq!(g.encoder_w.max_abs(), 0.0);
}

#[test]
fn mse_at_target_has_zero_gradient() {
    let mut cfg = tiny_config(2);
    cfg.pooling = Pooling::Sequence;
    let model = LsslModel::new(&cfg).unwrap();
    let data: Vec<DenseMatrix> = (0..3).map(|i| random_seq(20 + i, 12, 2)).collect();
    let targets = data.iter().map(|u| model.forward(u, ViewMode::Conv).unwrap()).collect();
    let batch = SequenceBatch::new(data, Labels::Targets(targets)).unwrap();
    let (loss, g) = model_backward(&model, &batch, LossSpec::Mse).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.flatten().iter().all(|&v| v == 0.0));
}

#[test]
fn loss_label_mismatch_is_rejected() {
    let model = LsslModel::new(&tiny_config(3)).unwrap();
    let batch = class_batch(3, 2, 8);
    assert!(model_backward(&model, &batch, LossSpec::Mse).is_err());
    let bad = SequenceBatch::new(batch.data.clone(), Labels::Classes(vec![0, 7])).unwrap();
    assert!(model_backward(&model, &bad, LossSpec::CrossEntropy).is_err());
}

fn check(model: &LsslModel, batch: &SequenceBatch, loss: LossSpec, seed: u64) -> GradcheckReport {
    let report = gradcheck_model(model, batch, loss, 64, seed, FaultInjection::default()).unwrap();
    assert!(report.max_rel_err < 1e-4, "rel err {} at {}", report.max_rel_err, report.worst_index);
    report
}

#[test]
fn fixed_mode_matches_finite_differences() {
    for (seed, norm, pooling) in [
        (4, NormPlacement::PostNorm, Pooling::MeanOverTime),
        (5, NormPlacement::PreNorm, Pooling::LastStep),
    ] {
        let mut cfg = tiny_config(seed);
        cfg.norm = norm;
        cfg.pooling = pooling;
        let mut model = LsslModel::new(&cfg).unwrap();
        for l in &mut model.layers {
            l.d = DenseMatrix::from_fn(8, 1, |i, _| 0.05 * i as f64);
        }
        let batch = class_batch(seed, 3, 32);
        check(&model, &batch, LossSpec::CrossEntropy, seed);
    }
}

#[test]
fn full_mode_matches_finite_differences() {
    let mut cfg = tiny_config(6);
    cfg.pooling = Pooling::Sequence;
    cfg.mode = TrainMode::Full;
    cfg.m = 2;
    let model = LsslModel::new(&cfg).unwrap();
    let batch = target_batch(6, 2, 32, 32);
    let report = check(&model, &batch, LossSpec::Mse, 6);
    assert!(report.checked > 100);
}

#[test]
fn injected_dt_sign_fault_is_caught() {
    let mut cfg = tiny_config(7);
    cfg.pooling = Pooling::Sequence;
    cfg.mode = TrainMode::Full;
    let model = LsslModel::new(&cfg).unwrap();
    let batch = target_batch(7, 2, 24, 24);
    let fault = FaultInjection { flip_dt_sign: true };
    let report = gradcheck_model(&model, &batch, LossSpec::Mse, 64, 7, fault).unwrap();
    assert!(report.max_rel_err > 0.5);
}

/// `sum_t dy . y_t` through the plain recurrence.
fn recurrent_loss(layer: &LsslLayer, h: usize, u: &[f64], dy: &DenseMatrix) -> f64 {
    let (ab, bb) = layer.discretized(h).unwrap();
    let ssm = DiscreteSSM { a_bar: ab, b_bar: bb.into(), c: layer.c[h].clone(), d: layer.d.row(h).to_vec().into(), dt: layer.dt()[h] };
    let out = apply_recurrent(&ssm, u, &vec![0.0; layer.order()]).unwrap();
    out.y.as_slice().iter().zip(dy.as_slice()).map(|(a, b)| a * b).sum()
}

fn full_layer(n: usize, m: usize, seed: u64) -> LsslLayer {
    let mut layer = init_layer(3, n, m, 1e-2, 2e-1, seed, HippoFamily::LegS).unwrap();
    layer.set_mode(TrainMode::Full).unwrap();
    layer
}

#[test]
fn recurrent_grads_zero_for_zero_dy() {
    let layer = full_layer(6, 2, 8);
    let u = rng::uniform_vec(&mut rng::stream(8, 1), 20, -1.0, 1.0);
    let (d_dt, d_a) = recurrent_param_grads(&layer, 1, &u, &DenseMatrix::zeros(2, 20)).unwrap();
    assert_eq!(d_dt, 0.0);
    assert_eq!(d_a.max_abs(), 0.0);
    let fixed = init_layer(3, 6, 2, 1e-2, 2e-1, 8, HippoFamily::LegS).unwrap();
    assert!(recurrent_param_grads(&fixed, 0, &u, &DenseMatrix::zeros(2, 20)).is_err());
}

#[test]
fn single_step_is_one_composition() {
    let layer = full_layer(5, 1, 9);
    let h = 2;
    let u = [0.7];
    let dy = DenseMatrix::from_vec(1, 1, vec![1.3]).unwrap();
    let (d_dt, d_a) = recurrent_param_grads(&layer, h, &u, &dy).unwrap();
    // x_0 = B(A, -dt/2, F(A, dt/2, 0) + dt b u), so only the backward map and the input term matter
    let a = layer.state_matrix().to_dense().unwrap();
    let dt = layer.dt()[h];
    let b = layer.b().row(h);
    let w: Vec<f64> = b.iter().map(|v| dt * v * u[0]).collect();
    let gx: Vec<f64> = layer.c[h].row(0).iter().map(|c| 1.3 * c).collect();
    let bg = backward_diff_grad(&a, -0.5 * dt, &w, &gx).unwrap();
    let fg = forward_diff_grad(&a, 0.5 * dt, &vec![0.0; 5], &bg.dx).unwrap();
    let want_dt = -0.5 * bg.d_dt + 0.5 * fg.d_dt + u[0] * dot(b, &bg.dx);
    assert!((d_dt - want_dt).abs() < 1e-13);
    let want_a = bg.d_a.add(&fg.d_a).unwrap();
    assert!(d_a.max_abs_diff(&want_a) < 1e-13);
}

#[test]
fn scalar_system_symbolic() {
    let mut layer = init_layer(1, 1, 1, 0.3, 0.3, 0, HippoFamily::LegS).unwrap();
    layer.set_mode(TrainMode::Full).unwrap();
    layer.c[0] = DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap();
    // A = -1, b = 1: y_0 = c dt u / (1 + dt/2), dy_0/d dt = c u / (1 + dt/2)^2
    let (u, dt) = (1.5, 0.3);
    let dy = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
    let (d_dt, _) = recurrent_param_grads(&layer, 0, &[u], &dy).unwrap();
    let want = 2.0 * u / (1.0 + dt / 2.0f64).powi(2);
    assert!((d_dt - want).abs() < 1e-14);
}

#[test]
fn recurrent_grads_match_finite_differences() {
    let mut r = rng::stream(10, 0);
    for (n, len, m) in [(4, 16, 1), (8, 40, 2), (16, 64, 1)] {
        let layer = full_layer(n, m, 10 + n as u64);
        let u = rng::uniform_vec(&mut r, len, -1.0, 1.0);
        let dy = DenseMatrix::from_fn(m, len, |_, _| rng::uniform(&mut r, -1.0, 1.0));
        let h = 1;
        let (d_dt, d_a) = recurrent_param_grads(&layer, h, &u, &dy).unwrap();

        let dt0 = layer.dt().to_vec();
        let step = 1e-5 * dt0[h].max(1.0);
        let at_dt = |v: f64| {
            let mut l = layer.clone();
            let mut dts = dt0.clone();
            dts[h] = v;
            l.set_dt(dts).unwrap();
            recurrent_loss(&l, h, &u, &dy)
        };
        let fd = (at_dt(dt0[h] + step) - at_dt(dt0[h] - step)) / (2.0 * step);
        assert!(relative_error(d_dt, fd) < 1e-4, "N={n} d_dt {d_dt} vs {fd}");

        let a0 = layer.state_matrix().to_dense().unwrap();
        let mut cells = rng::stream(11, n as u64);
        for _ in 0..16 {
            let i = (rng::uniform(&mut cells, 0.0, n as f64) as usize).min(n - 1);
            let j = (rng::uniform(&mut cells, 0.0, n as f64) as usize).min(n - 1);
            let hh = 1e-5 * a0[(i, j)].abs().max(1.0);
            let at_a = |v: f64| {
                let mut l = layer.clone();
                let mut a = a0.clone();
                a[(i, j)] = v;
                l.set_state_matrix(StateMatrix::Dense(a)).unwrap();
                recurrent_loss(&l, h, &u, &dy)
            };
            let fd = (at_a(a0[(i, j)] + hh) - at_a(a0[(i, j)] - hh)) / (2.0 * hh);
            assert!(relative_error(d_a[(i, j)], fd) < 1e-4, "N={n} dA[{i},{j}] {} vs {fd}", d_a[(i, j)]);
        }
    }
}

#[test]
fn adam_first_step_and_zero_gradients() {
    let mut p = vec![1.0, -2.0, 3.0];
    let mut st = AdamState::new(3);
    sgd_adam_step(&mut p, &[0.0; 3], &mut st, 0.1, (0.9, 0.999), 1e-8).unwrap();
    assert_eq!(p, vec![1.0, -2.0, 3.0]);

    let g = [0.5, -4.0, 1e-3];
    let mut p = vec![0.0; 3];
    let mut st = AdamState::new(3);
    sgd_adam_step(&mut p, &g, &mut st, 0.01, (0.9, 0.999), 1e-8).unwrap();
    for (pi, gi) in p.iter().zip(&g) {
        let want = -0.01 * gi / (gi.abs() + 1e-8);
        assert!((pi - want).abs() < 1e-12);
    }

    let (m0, v0) = (st.m.clone(), st.v.clone());
    sgd_adam_step(&mut p, &[0.0; 3], &mut st, 0.01, (0.9, 0.999), 1e-8).unwrap();
    for i in 0..3 {
        assert!((st.m[i] - 0.9 * m0[i]).abs() < 1e-15);
        assert!((st.v[i] - 0.999 * v0[i]).abs() < 1e-15);
    }
    assert!(sgd_adam_step(&mut p, &[0.0; 3], &mut st, 0.0, (0.9, 0.999), 1e-8).is_err());
    assert!(sgd_adam_step(&mut p, &[0.0; 2], &mut st, 0.1, (0.9, 0.999), 1e-8).is_err());
}

#[test]
fn adam_is_deterministic() {
    let g = [0.3, -0.2];
    let run = || {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            sgd_adam_step(&mut p, &g, &mut st, 0.05, (0.9, 0.999), 1e-8).unwrap();
        }
        (p, st)
    };
    assert_eq!(run(), run());
}

#[test]
fn batch_order_does_not_change_gradient() {
    let model = LsslModel::new(&tiny_config(12)).unwrap();
    let batch = class_batch(12, 5, 20);
    let (l1, g1) = model_backward(&model, &batch, LossSpec::CrossEntropy).unwrap();
    let perm = batch.select(&[3, 0, 4, 2, 1]);
    let (l2, g2) = model_backward(&model, &perm, LossSpec::CrossEntropy).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn fixed_mode_keeps_transition_frozen() {
    let mut model = LsslModel::new(&tiny_config(13)).unwrap();
    let before: Vec<_> = model.layers.iter().map(|l| (l.state_matrix().clone(), l.b().clone(), l.dt().to_vec())).collect();
    let batch = class_batch(13, 3, 16);
    let mut st = AdamState::new(model.param_count());
    for _ in 0..3 {
        let (_, g) = model_backward(&model, &batch, LossSpec::CrossEntropy).unwrap();
        apply_adam(&mut model, &g, &mut st, 1e-2).unwrap();
    }
    for (l, (a, b, dt)) in model.layers.iter().zip(&before) {
        assert_eq!(l.state_matrix(), a);
        assert_eq!(l.b(), b);
        assert_eq!(l.dt(), &dt[..]);
    }
}
