//! Stacked forward step, warm-up/self-loop unroll and its backward pass.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{
    cell_backward, cell_forward, matvec_acc, matvec_t_acc, outer_acc, CellBackward, CellTrace,
};
use super::model::{HiddenState, LayerGrads, RnnModel};
use crate::data::Window;
use crate::error::{Error, Result};

/// How the hidden state evolves during the self-loop phase of a rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenMode {
    /// Carried forward every step, as in training.
    #[default]
    Propagate,
    /// Held at its post-warm-up value for every prediction.
    Freeze,
    /// Reset to zero when prediction starts, then carried forward.
    Zero,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct StepTrace {
    cells: Vec<CellTrace>,
    /// Inverted-dropout masks applied to the input of layers `1..`.
    masks: Vec<Vec<f64>>,
    out: Vec<f64>,
    xin: Vec<f64>,
}

/// One step of the stack. With `head`, `tr.out` receives the next state.
pub(crate) fn step(
    model: &RnnModel,
    input: &[f64],
    state: &mut HiddenState,
    mut dropout: Option<&mut ChaCha8Rng>,
    head: bool,
    tr: &mut StepTrace,
) {
    let arch = &model.arch;
    let layers = arch.layers;
    tr.cells.resize_with(layers, CellTrace::default);
    tr.masks.resize_with(layers.saturating_sub(1), Vec::new);
    let p = arch.effective_dropout();
    for l in 0..layers {
        let lp = model.layer(l);
        tr.xin.clear();
        if l == 0 {
            tr.xin.extend_from_slice(input);
        } else {
            tr.xin.extend_from_slice(&state.h[l - 1]);
            let mask = &mut tr.masks[l - 1];
            mask.clear();
            if let (Some(rng), true) = (dropout.as_deref_mut(), p > 0.0) {
                let keep = 1.0 / (1.0 - p);
                mask.extend((0..arch.hidden_dim).map(|_| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                }));
                for (x, m) in tr.xin.iter_mut().zip(mask.iter()) {
                    *x *= m;
                }
            }
        }
        let c_prev: &[f64] = state.c.get(l).map(Vec::as_slice).unwrap_or(&[]);
        let cell = &mut tr.cells[l];
        cell_forward(&lp, &tr.xin, &state.h[l], c_prev, cell);
        state.h[l].copy_from_slice(&cell.h);
        if let Some(c) = state.c.get_mut(l) {
            c.copy_from_slice(&cell.c);
        }
    }
    tr.out.clear();
    if head {
        tr.out.extend_from_slice(model.b_out());
        matvec_acc(&mut tr.out, model.w_out(), state.top());
        if arch.residual {
            for (o, x) in tr.out.iter_mut().zip(input) {
                *o += x;
            }
        }
    }
}

fn fill_input(buf: &mut Vec<f64>, x: impl IntoIterator<Item = f64>, u: ArrayView1<'_, f64>) {
    buf.clear();
    buf.extend(x);
    buf.extend(u.iter().copied());
}

pub(crate) struct Unrolled {
    pub predictions: Array2<f64>,
    pub warm: HiddenState,
    pub last: HiddenState,
}

/// Warm-up over `n_w` measured steps, then `horizon` self-loop predictions
/// seeded with `x[n_w]`. Callers validate lengths.
#[allow(clippy::too_many_arguments)]
pub(crate) fn unroll(
    model: &RnnModel,
    x: ArrayView2<'_, f64>,
    u: ArrayView2<'_, f64>,
    n_w: usize,
    horizon: usize,
    mode: HiddenMode,
    h0: HiddenState,
    mut dropout: Option<&mut ChaCha8Rng>,
    mut traces: Option<&mut Vec<StepTrace>>,
) -> Unrolled {
    let s = model.arch.state_dim;
    let mut state = h0;
    let mut scratch = StepTrace::default();
    let mut inp = Vec::with_capacity(model.arch.input_dim);
    if let Some(t) = traces.as_deref_mut() {
        t.clear();
        t.resize_with(n_w + horizon, StepTrace::default);
    }
    for k in 0..n_w {
        fill_input(&mut inp, x.row(k).iter().copied(), u.row(k));
        let tr = match traces.as_deref_mut() {
            Some(t) => &mut t[k],
            None => &mut scratch,
        };
        step(model, &inp, &mut state, dropout.as_deref_mut(), false, tr);
    }
    let warm = state.clone();
    if mode == HiddenMode::Zero {
        state = HiddenState::zeros(&model.arch);
    }
    let mut predictions = Array2::zeros((horizon, s));
    if horizon > 0 {
        let mut xhat: Vec<f64> = x.row(n_w).to_vec();
        for j in 0..horizon {
            let k = n_w + j;
            fill_input(&mut inp, xhat.iter().copied(), u.row(k));
            let tr = match traces.as_deref_mut() {
                Some(t) => &mut t[k],
                None => &mut scratch,
            };
            if mode == HiddenMode::Freeze {
                let mut frozen = warm.clone();
                step(model, &inp, &mut frozen, dropout.as_deref_mut(), true, tr);
            } else {
                step(model, &inp, &mut state, dropout.as_deref_mut(), true, tr);
            }
            xhat.copy_from_slice(&tr.out);
            predictions.row_mut(j).assign(&ArrayView1::from(&xhat[..]));
        }
    }
    let last = if mode == HiddenMode::Freeze {
        warm.clone()
    } else {
        state
    };
    Unrolled {
        predictions,
        warm,
        last,
    }
}

/// Backward pass of a propagate-mode unroll recorded in `traces`. `dpred`
/// holds the loss gradient for each prediction.
pub(crate) fn backward(
    model: &RnnModel,
    traces: &[StepTrace],
    n_w: usize,
    dpred: ArrayView2<'_, f64>,
    grads: &mut [f64],
) {
    let arch = &model.arch;
    let (s, h, layers) = (arch.state_dim, arch.hidden_dim, arch.layers);
    let lay = &model.layout;
    let mut carry_h = vec![vec![0.0; h]; layers];
    let mut carry_c: Vec<Vec<f64>> = if arch.cell == super::CellKind::Lstm {
        vec![vec![0.0; h]; layers]
    } else {
        vec![Vec::new(); layers]
    };
    let mut d_feed = vec![0.0; s];
    let mut d_out = vec![0.0; s];
    let mut d_above = vec![0.0; h];
    let mut dh = vec![0.0; h];
    let mut cb = CellBackward::default();
    for k in (0..traces.len()).rev() {
        let tr = &traces[k];
        d_above.iter_mut().for_each(|v| *v = 0.0);
        let is_pred = k >= n_w;
        if is_pred {
            for ((d, g), f) in d_out.iter_mut().zip(dpred.row(k - n_w)).zip(&d_feed) {
                *d = g + f;
            }
            let top = &tr.cells[layers - 1].h;
            outer_acc(&mut grads[lay.w_out..lay.b_out], &d_out, top);
            for (g, d) in grads[lay.b_out..lay.total].iter_mut().zip(&d_out) {
                *g += d;
            }
            matvec_t_acc(&mut d_above, model.w_out(), &d_out);
        }
        for l in (0..layers).rev() {
            for ((d, c), a) in dh.iter_mut().zip(&carry_h[l]).zip(&d_above) {
                *d = c + a;
            }
            let lp = model.layer(l);
            let mut lg = LayerGrads::from_flat(&lay.layers[l], grads);
            cell_backward(&lp, &tr.cells[l], &dh, &carry_c[l], Some(&mut lg), &mut cb);
            carry_h[l].copy_from_slice(&cb.dh_prev);
            if !cb.dc_prev.is_empty() {
                carry_c[l].copy_from_slice(&cb.dc_prev);
            }
            if l > 0 {
                let mask = &tr.masks[l - 1];
                d_above.copy_from_slice(&cb.dx);
                if !mask.is_empty() {
                    for (d, m) in d_above.iter_mut().zip(mask) {
                        *d *= m;
                    }
                }
            } else {
                d_feed.copy_from_slice(&cb.dx[..s]);
                if is_pred && arch.residual {
                    for (f, d) in d_feed.iter_mut().zip(&d_out) {
                        *f += d;
                    }
                }
            }
        }
    }
}

fn guard(values: impl IntoIterator<Item = f64>, offset: usize) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !(v.abs() <= 1.0 + 1e-9) {
            return Err(Error::UnscaledInput {
                index: offset + i,
                value: v,
            });
        }
    }
    Ok(())
}

/// One inference step `x̂_{k+1}, h_k = f(x_k, u_k, h_{k−1})` on scaled values.
pub fn rnn_forward(
    model: &RnnModel,
    x: &[f64],
    u: &[f64],
    h: &HiddenState,
) -> Result<(Vec<f64>, HiddenState)> {
    let arch = &model.arch;
    if x.len() != arch.state_dim {
        return Err(Error::dim("state", arch.state_dim, x.len()));
    }
    if u.len() != arch.control_dim() {
        return Err(Error::dim("input", arch.control_dim(), u.len()));
    }
    h.check(arch)?;
    guard(x.iter().copied(), 0)?;
    guard(u.iter().copied(), x.len())?;
    let mut inp = x.to_vec();
    inp.extend_from_slice(u);
    let mut state = h.clone();
    let mut tr = StepTrace::default();
    step(model, &inp, &mut state, None, true, &mut tr);
    Ok((tr.out, state))
}

/// Hidden state after consuming `x` and `u`; no range check.
pub fn advance_hidden(model: &RnnModel, x: &[f64], u: &[f64], h: &HiddenState) -> HiddenState {
    let mut inp = x.to_vec();
    inp.extend_from_slice(u);
    let mut state = h.clone();
    let mut tr = StepTrace::default();
    step(model, &inp, &mut state, None, false, &mut tr);
    state
}

/// Next state with `h` held fixed; no range check on `x` or `u`.
pub fn frozen_step(model: &RnnModel, x: &[f64], u: &[f64], h: &HiddenState) -> Vec<f64> {
    let mut inp = x.to_vec();
    inp.extend_from_slice(u);
    let mut state = h.clone();
    let mut tr = StepTrace::default();
    step(model, &inp, &mut state, None, true, &mut tr);
    tr.out
}

/// Next state and its Jacobians for a step with `h` held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct StepJacobian {
    pub x_next: Vec<f64>,
    /// `∂x̂_{k+1}/∂x_k`, row-major `S × S`.
    pub jx: Vec<f64>,
    /// `∂x̂_{k+1}/∂u_k`, row-major `S × U`.
    pub ju: Vec<f64>,
}

pub fn step_jacobian(model: &RnnModel, x: &[f64], u: &[f64], h: &HiddenState) -> StepJacobian {
    let arch = &model.arch;
    let (s, m, hd, layers) = (
        arch.state_dim,
        arch.control_dim(),
        arch.hidden_dim,
        arch.layers,
    );
    let mut inp = x.to_vec();
    inp.extend_from_slice(u);
    let mut state = h.clone();
    let mut tr = StepTrace::default();
    step(model, &inp, &mut state, None, true, &mut tr);
    let mut jx = vec![0.0; s * s];
    let mut ju = vec![0.0; s * m];
    let mut d_above = vec![0.0; hd];
    let zeros = vec![0.0; hd];
    let mut cb = CellBackward::default();
    for i in 0..s {
        d_above.copy_from_slice(&model.w_out()[i * hd..(i + 1) * hd]);
        for l in (0..layers).rev() {
            let lp = model.layer(l);
            let dc: &[f64] = if h.c.is_empty() { &[] } else { &zeros };
            cell_backward(&lp, &tr.cells[l], &d_above, dc, None, &mut cb);
            if l > 0 {
                d_above.copy_from_slice(&cb.dx);
            }
        }
        jx[i * s..(i + 1) * s].copy_from_slice(&cb.dx[..s]);
        ju[i * m..(i + 1) * m].copy_from_slice(&cb.dx[s..]);
        if arch.residual {
            jx[i * s + i] += 1.0;
        }
    }
    StepJacobian {
        x_next: tr.out,
        jx,
        ju,
    }
}

/// Predicted states of a rollout and the hidden states it passed through.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// `horizon × S` self-loop predictions of `x[n_w+1..]`.
    pub predictions: Array2<f64>,
    /// Hidden state after the warm-up.
    pub warm: HiddenState,
    /// Hidden state after the last prediction (the warm one in freeze mode).
    pub last: HiddenState,
}

/// Warms the hidden state on `n_w` measured steps, then predicts `horizon`
/// states recursively from the seed `x[n_w]` and the inputs `u[n_w..]`.
pub fn rollout(
    model: &RnnModel,
    x: ArrayView2<'_, f64>,
    u: ArrayView2<'_, f64>,
    n_w: usize,
    horizon: usize,
    mode: HiddenMode,
    h0: Option<&HiddenState>,
) -> Result<Rollout> {
    let arch = &model.arch;
    if x.ncols() != arch.state_dim {
        return Err(Error::dim("state columns", arch.state_dim, x.ncols()));
    }
    if u.ncols() != arch.control_dim() {
        return Err(Error::dim("input columns", arch.control_dim(), u.ncols()));
    }
    let need_x = n_w + usize::from(horizon > 0);
    if x.nrows() < need_x {
        return Err(Error::InsufficientLength {
            needed: need_x,
            got: x.nrows(),
        });
    }
    if u.nrows() < n_w + horizon {
        return Err(Error::InsufficientLength {
            needed: n_w + horizon,
            got: u.nrows(),
        });
    }
    for k in 0..need_x {
        guard(x.row(k).iter().copied(), 0)?;
    }
    for k in 0..n_w + horizon {
        guard(u.row(k).iter().copied(), arch.state_dim)?;
    }
    let h0 = match h0 {
        Some(h) => {
            h.check(arch)?;
            h.clone()
        }
        None => HiddenState::zeros(arch),
    };
    let r = unroll(model, x, u, n_w, horizon, mode, h0, None, None);
    Ok(Rollout {
        predictions: r.predictions,
        warm: r.warm,
        last: r.last,
    })
}

/// Mean over all elements of the squared difference.
pub fn mse_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sse: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / pred.len() as f64)
}

/// Batch loss and its gradient with respect to the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn check_window(model: &RnnModel, w: &Window<'_>, n_w: usize, n_p: usize) -> Result<()> {
    let span = n_w + n_p + 2;
    if w.x.nrows() < span || w.u.nrows() < span - 1 {
        return Err(Error::InsufficientLength {
            needed: span,
            got: w.x.nrows(),
        });
    }
    if w.x.ncols() != model.arch.state_dim || w.u.ncols() != model.arch.control_dim() {
        return Err(Error::dim(
            "window columns",
            model.arch.input_dim,
            w.x.ncols() + w.u.ncols(),
        ));
    }
    Ok(())
}

/// Sum of squared errors of one window's self-loop predictions; with
/// `grad`, also accumulates `scale · ∂sse/∂θ`.
pub(crate) fn window_sse(
    model: &RnnModel,
    w: &Window<'_>,
    n_w: usize,
    n_p: usize,
    dropout_seed: Option<u64>,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let horizon = n_p + 1;
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut traces = Vec::new();
    let want_grad = grad.is_some();
    let r = unroll(
        model,
        w.x,
        w.u,
        n_w,
        horizon,
        HiddenMode::Propagate,
        HiddenState::zeros(&model.arch),
        rng.as_mut(),
        want_grad.then_some(&mut traces),
    );
    let targets = w.x.slice(ndarray::s![n_w + 1..n_w + 1 + horizon, ..]);
    let diff = &r.predictions - &targets;
    let sse = diff.iter().map(|d| d * d).sum();
    if let Some((g, scale)) = grad {
        let dpred = diff.mapv(|d| 2.0 * scale * d);
        backward(model, &traces, n_w, dpred.view(), g);
    }
    sse
}

/// Gradients of the batch MSE over the self-loop predictions of every window,
/// with dropout off.
pub fn compute_gradients(
    model: &RnnModel,
    batch: &[Window<'_>],
    n_w: usize,
    n_p: usize,
) -> Result<Gradients> {
    gradients_with(model, batch, n_w, n_p, None, true)
}

/// As [`compute_gradients`], with per-window dropout seeds. Per-window
/// results are summed in batch order, so the outcome does not depend on
/// `parallel`.
pub fn gradients_with(
    model: &RnnModel,
    batch: &[Window<'_>],
    n_w: usize,
    n_p: usize,
    dropout_seeds: Option<&[u64]>,
    parallel: bool,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for w in batch {
        check_window(model, w, n_w, n_p)?;
    }
    let n_total = (batch.len() * (n_p + 1) * model.arch.state_dim) as f64;
    let scale = 1.0 / n_total;
    let p = model.params.len();
    let one = |i: usize| {
        let mut g = vec![0.0; p];
        let seed = dropout_seeds.map(|s| s[i]);
        let sse = window_sse(model, &batch[i], n_w, n_p, seed, Some((&mut g, scale)));
        (sse, g)
    };
    let parts: Vec<(f64, Vec<f64>)> = if parallel {
        (0..batch.len()).into_par_iter().map(one).collect()
    } else {
        (0..batch.len()).map(one).collect()
    };
    let mut grad = vec![0.0; p];
    let mut sse = 0.0;
    for (s, g) in parts {
        sse += s;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(Gradients {
        loss: sse / n_total,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::model::{CellKind, RnnArch};

    fn toy(kind: CellKind, layers: usize, seed: u64) -> RnnModel {
        RnnModel::init(RnnArch::new(kind, 2, 3, 4, layers), seed).unwrap()
    }

    fn seq(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-0.9..0.9));
        let u = Array2::from_shape_fn((n, 3), |_| rng.random_range(-0.9..0.9));
        (x, u)
    }

    #[test]
    fn zero_model_predicts_bias() {
        let mut m = RnnModel::zeros(RnnArch::new(CellKind::Gru, 2, 3, 4, 2)).unwrap();
        let b = m.layout.b_out;
        m.params[b] = 0.25;
        m.params[b + 1] = -0.5;
        let (x, u) = seq(12, 1);
        let r = rollout(&m, x.view(), u.view(), 5, 6, HiddenMode::Propagate, None).unwrap();
        for row in r.predictions.rows() {
            assert_eq!(row.to_vec(), vec![0.25, -0.5]);
        }
        let h = HiddenState::zeros(&m.arch);
        let (xn, _) = rnn_forward(&m, &[0.1, 0.2], &[0.0, 0.3, -1.0], &h).unwrap();
        assert_eq!(xn, vec![0.25, -0.5]);
    }

    #[test]
    fn horizon_zero_only_warms() {
        let m = toy(CellKind::Gru, 1, 2);
        let (x, u) = seq(8, 3);
        let r = rollout(&m, x.view(), u.view(), 8, 0, HiddenMode::Propagate, None).unwrap();
        assert_eq!(r.predictions.nrows(), 0);
        assert_ne!(r.warm, HiddenState::zeros(&m.arch));
        assert!(matches!(
            rollout(&m, x.view(), u.view(), 8, 1, HiddenMode::Propagate, None),
            Err(Error::InsufficientLength { .. })
        ));
    }

    #[test]
    fn unscaled_input_rejected() {
        let m = toy(CellKind::Lstm, 1, 0);
        let h = HiddenState::zeros(&m.arch);
        assert!(matches!(
            rnn_forward(&m, &[1.5, 0.0], &[0.0; 3], &h),
            Err(Error::UnscaledInput { index: 0, .. })
        ));
        assert!(rnn_forward(&m, &[1.0 + 1e-10, 0.0], &[0.0; 3], &h).is_ok());
    }

    #[test]
    fn inference_is_repeatable() {
        let m = toy(CellKind::Gru, 2, 5).clone();
        let mut m = m;
        m.arch.dropout = 0.5;
        let h = HiddenState::zeros(&m.arch);
        let a = rnn_forward(&m, &[0.1, 0.2], &[0.3, 0.4, 0.5], &h).unwrap();
        let b = rnn_forward(&m, &[0.1, 0.2], &[0.3, 0.4, 0.5], &h).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_matches_stepwise_forward() {
        let m = toy(CellKind::Lstm, 2, 7);
        let (x, u) = seq(10, 8);
        let r = rollout(&m, x.view(), u.view(), 4, 5, HiddenMode::Propagate, None).unwrap();
        let mut h = HiddenState::zeros(&m.arch);
        for k in 0..4 {
            h = rnn_forward(
                &m,
                x.row(k).as_slice().unwrap(),
                u.row(k).as_slice().unwrap(),
                &h,
            )
            .unwrap()
            .1;
        }
        let mut xh = x.row(4).to_vec();
        for j in 0..5 {
            let (xn, hn) = rnn_forward(&m, &xh, u.row(4 + j).as_slice().unwrap(), &h).unwrap();
            assert_eq!(xn, r.predictions.row(j).to_vec());
            xh = xn;
            h = hn;
        }
        assert_eq!(h, r.last);
    }

    #[test]
    fn freeze_uses_warm_state() {
        let m = toy(CellKind::Gru, 1, 9);
        let (x, u) = seq(10, 10);
        let r = rollout(&m, x.view(), u.view(), 4, 3, HiddenMode::Freeze, None).unwrap();
        let p1 = frozen_step(
            &m,
            r.predictions.row(0).as_slice().unwrap(),
            u.row(5).as_slice().unwrap(),
            &r.warm,
        );
        assert_eq!(p1, r.predictions.row(1).to_vec());
        assert_eq!(r.last, r.warm);
    }

    #[test]
    fn zero_mode_matches_no_warmup() {
        let m = toy(CellKind::Gru, 2, 11);
        let (x, u) = seq(10, 12);
        let z = rollout(&m, x.view(), u.view(), 4, 3, HiddenMode::Zero, None).unwrap();
        let cold = rollout(
            &m,
            x.slice(ndarray::s![4.., ..]),
            u.slice(ndarray::s![4.., ..]),
            0,
            3,
            HiddenMode::Propagate,
            None,
        )
        .unwrap();
        assert_eq!(z.predictions, cold.predictions);
    }

    #[test]
    fn mse_examples() {
        let a = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        assert_eq!(mse_loss(a.view(), a.view()).unwrap(), 0.0);
        let b = &a + 1.0;
        assert!((mse_loss(b.view(), a.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            mse_loss(a.view(), a.t()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn step_jacobian_matches_differences() {
        for kind in [CellKind::Gru, CellKind::Lstm] {
            let m = toy(kind, 2, 13);
            let (x, u) = seq(6, 14);
            let h = rollout(&m, x.view(), u.view(), 6, 0, HiddenMode::Propagate, None)
                .unwrap()
                .warm;
            let (x0, u0) = ([0.2, -0.3], [0.1, 0.5, -0.4]);
            let j = step_jacobian(&m, &x0, &u0, &h);
            let eps = 1e-6;
            for c in 0..5 {
                let mut xp = x0.to_vec();
                let mut up = u0.to_vec();
                let mut xm = x0.to_vec();
                let mut um = u0.to_vec();
                if c < 2 {
                    xp[c] += eps;
                    xm[c] -= eps;
                } else {
                    up[c - 2] += eps;
                    um[c - 2] -= eps;
                }
                let fp = frozen_step(&m, &xp, &up, &h);
                let fm = frozen_step(&m, &xm, &um, &h);
                for i in 0..2 {
                    let fd = (fp[i] - fm[i]) / (2.0 * eps);
                    let an = if c < 2 {
                        j.jx[i * 2 + c]
                    } else {
                        j.ju[i * 3 + c - 2]
                    };
                    assert!((fd - an).abs() < 1e-7, "{kind:?} {i} {c}: {fd} vs {an}");
                }
            }
        }
    }
}
