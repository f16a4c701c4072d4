//! Analytic gradients against central finite differences.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnmpc_core::data::{make_sequences, ScaledSeries, Window};
use rnnmpc_core::rnn::{
    cell_vjp, compute_gradients, gru_cell_forward, lstm_cell_forward, CellKind, LayerParams,
    RnnArch, RnnModel,
};

fn series(n: usize, s: usize, m: usize, seed: u64) -> Arc<ScaledSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, s), |_| rng.random_range(-0.9..0.9));
    let u = Array2::from_shape_fn((n, m), |_| rng.random_range(-0.9..0.9));
    Arc::new(ScaledSeries::new("g", x, u).unwrap())
}

/// Scaled-down weights keep the finite differences in their accurate regime.
fn model(kind: CellKind, hidden: usize, layers: usize, residual: bool, seed: u64) -> RnnModel {
    let mut arch = RnnArch::new(kind, 2, 3, hidden, layers);
    arch.residual = residual;
    let mut m = RnnModel::init(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in &mut m.params {
        *p = 0.8 * *p + rng.random_range(-0.1..0.1);
    }
    m
}

fn loss(m: &RnnModel, batch: &[Window<'_>], n_w: usize, n_p: usize) -> f64 {
    compute_gradients(m, batch, n_w, n_p).unwrap().loss
}

fn check_close(analytic: f64, numeric: f64, what: &str) {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    assert!(
        (analytic - numeric).abs() <= 1e-4 * scale,
        "{what}: analytic {analytic:e} vs numeric {numeric:e}"
    );
}

#[test]
fn sequence_gradients_match_finite_differences() {
    let cases = [
        (CellKind::Gru, 3, 1, false),
        (CellKind::Gru, 8, 2, false),
        (CellKind::Lstm, 3, 1, false),
        (CellKind::Lstm, 5, 2, true),
    ];
    for (i, &(kind, hidden, layers, residual)) in cases.iter().enumerate() {
        let (n_w, n_p) = (2, 2);
        let ds = make_sequences(series(12, 2, 3, i as u64), n_w, n_p, 2).unwrap();
        let batch: Vec<Window<'_>> = (0..ds.len()).map(|k| ds.window(k)).collect();
        let mut m = model(kind, hidden, layers, residual, 7 + i as u64);
        let g = compute_gradients(&m, &batch, n_w, n_p).unwrap();
        let h = 1e-6;
        for p in 0..m.params.len() {
            let orig = m.params[p];
            m.params[p] = orig + h;
            let lp = loss(&m, &batch, n_w, n_p);
            m.params[p] = orig - h;
            let lm = loss(&m, &batch, n_w, n_p);
            m.params[p] = orig;
            check_close(
                g.grad[p],
                (lp - lm) / (2.0 * h),
                &format!("{kind:?} case {i} param {p}"),
            );
        }
    }
}

#[test]
fn zero_loss_batch_has_zero_gradient() {
    // Targets replaced by the model's own predictions.
    let m = model(CellKind::Gru, 4, 2, false, 3);
    let (n_w, n_p) = (3, 2);
    let src = series(n_w + n_p + 2, 2, 3, 5);
    let r = rnnmpc_core::rnn::rollout(
        &m,
        src.x.view(),
        src.u.view(),
        n_w,
        n_p + 1,
        rnnmpc_core::rnn::HiddenMode::Propagate,
        None,
    )
    .unwrap();
    let mut x = src.x.clone();
    x.slice_mut(ndarray::s![n_w + 1.., ..])
        .assign(&r.predictions);
    let fitted = Arc::new(ScaledSeries::new("fit", x, src.u.clone()).unwrap());
    let ds = make_sequences(fitted, n_w, n_p, 1).unwrap();
    let g = compute_gradients(&m, &[ds.window(0)], n_w, n_p).unwrap();
    assert_eq!(g.loss, 0.0);
    assert_eq!(g.norm(), 0.0);
}

#[test]
fn duplicated_batch_leaves_gradient_unchanged() {
    let m = model(CellKind::Lstm, 4, 1, false, 9);
    let ds = make_sequences(series(30, 2, 3, 6), 3, 2, 3).unwrap();
    let batch: Vec<Window<'_>> = (0..ds.len()).map(|k| ds.window(k)).collect();
    let doubled: Vec<Window<'_>> = batch.iter().chain(batch.iter()).copied().collect();
    let a = compute_gradients(&m, &batch, 3, 2).unwrap();
    let b = compute_gradients(&m, &doubled, 3, 2).unwrap();
    assert!((a.loss - b.loss).abs() <= 1e-15 * a.loss.abs());
    for (x, y) in a.grad.iter().zip(&b.grad) {
        assert!((x - y).abs() <= 1e-13 * x.abs().max(1e-12));
    }
}

fn cell_check(kind: CellKind) {
    // Scalar objective w·h' (+ v·c' for LSTM) of a single cell step.
    let m = model(kind, 4, 1, false, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-0.9..0.9)).collect() };
    let (x, hp, cp, w, v) = (draw(5), draw(4), draw(4), draw(4), draw(4));
    let cp = if kind == CellKind::Lstm {
        cp
    } else {
        Vec::new()
    };
    let lo = m.layout.layers[0].clone();
    let objective = |params: &[f64], x: &[f64], hp: &[f64], cp: &[f64]| -> f64 {
        let lp = LayerParams::from_flat(&m.arch, &lo, params);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        match kind {
            CellKind::Gru => dot(&gru_cell_forward(&lp, x, hp).unwrap(), &w),
            CellKind::Lstm => {
                let (h, c) = lstm_cell_forward(&lp, x, hp, cp).unwrap();
                dot(&h, &w) + dot(&c, &v)
            }
        }
    };
    let lp = m.layer(0);
    let dc = if kind == CellKind::Lstm {
        v.clone()
    } else {
        Vec::new()
    };
    let vjp = cell_vjp(&lp, &x, &hp, &cp, &w, &dc).unwrap();
    let analytic: Vec<f64> = [&vjp.w_ih, &vjp.w_hh, &vjp.b_ih, &vjp.b_hh]
        .into_iter()
        .flatten()
        .copied()
        .collect();
    let eps = 1e-6;
    let mut params = m.params.clone();
    for (k, p) in (lo.start..lo.end).enumerate() {
        let orig = params[p];
        params[p] = orig + eps;
        let a = objective(&params, &x, &hp, &cp);
        params[p] = orig - eps;
        let b = objective(&params, &x, &hp, &cp);
        params[p] = orig;
        check_close(
            analytic[k],
            (a - b) / (2.0 * eps),
            &format!("{kind:?} cell param {k}"),
        );
    }
    let fd = |vec: &[f64], i: usize, which: usize| {
        let mut p = vec.to_vec();
        p[i] += eps;
        let args = |p: &[f64]| match which {
            0 => objective(&params, p, &hp, &cp),
            1 => objective(&params, &x, p, &cp),
            _ => objective(&params, &x, &hp, p),
        };
        let a = args(&p);
        p[i] -= 2.0 * eps;
        (a - args(&p)) / (2.0 * eps)
    };
    for i in 0..x.len() {
        check_close(vjp.dx[i], fd(&x, i, 0), "dx");
    }
    for i in 0..hp.len() {
        check_close(vjp.dh_prev[i], fd(&hp, i, 1), "dh_prev");
    }
    for i in 0..cp.len() {
        check_close(vjp.dc_prev[i], fd(&cp, i, 2), "dc_prev");
    }
}

#[test]
fn cell_gradients_match_finite_differences() {
    cell_check(CellKind::Gru);
    cell_check(CellKind::Lstm);
}
