//! GRU and LSTM cells with hand-derived backward passes.
//!
//! GRU (gate rows `[z, r, n]`):
//! `z = σ(W_z x + b_iz + U_z h + b_hz)`, `r = σ(W_r x + b_ir + U_r h + b_hr)`,
//! `n = tanh(W_n x + b_in + U_n (r∘h) + b_hn)`, `h' = (1 − z)∘h + z∘n`.
//!
//! LSTM (gate rows `[i, f, o, g]`): `c' = f∘c + i∘g`, `h' = o∘tanh(c')`.

use super::model::{CellKind, LayerGrads, LayerParams};
use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[i] += Σ_j w[i, j] x[j]` for `w` row-major with `out.len()` rows.
pub(crate) fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out[j] += Σ_i w[i, j] y[i]`.
pub(crate) fn matvec_t_acc(out: &mut [f64], w: &[f64], y: &[f64]) {
    let cols = out.len();
    for (yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if *yi != 0.0 {
            for (o, wij) in out.iter_mut().zip(row) {
                *o += wij * yi;
            }
        }
    }
}

/// `g[i, j] += y[i] x[j]`.
pub(crate) fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if *yi != 0.0 {
            for (gij, xj) in row.iter_mut().zip(x) {
                *gij += yi * xj;
            }
        }
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Values saved by a forward step for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct CellTrace {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates, `G·H` values.
    pub gates: Vec<f64>,
    /// GRU: `r∘h_prev`; LSTM: `tanh(c')`.
    pub aux: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

fn refill(dst: &mut Vec<f64>, src: &[f64]) {
    dst.clear();
    dst.extend_from_slice(src);
}

/// Runs one cell step, leaving every intermediate in `t`.
pub(crate) fn cell_forward(
    lp: &LayerParams<'_>,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    t: &mut CellTrace,
) {
    let h = lp.hidden;
    refill(&mut t.x, x);
    refill(&mut t.h_prev, h_prev);
    refill(&mut t.gates, lp.b_ih);
    matvec_acc(&mut t.gates, lp.w_ih, x);
    match lp.kind {
        CellKind::Gru => {
            let (zr, n) = t.gates.split_at_mut(2 * h);
            add_to(zr, &lp.b_hh[..2 * h]);
            matvec_acc(zr, &lp.w_hh[..2 * h * h], h_prev);
            for v in zr.iter_mut() {
                *v = sigmoid(*v);
            }
            t.aux.clear();
            t.aux
                .extend(zr[h..].iter().zip(h_prev).map(|(r, hp)| r * hp));
            add_to(n, &lp.b_hh[2 * h..]);
            matvec_acc(n, &lp.w_hh[2 * h * h..], &t.aux);
            for v in n.iter_mut() {
                *v = v.tanh();
            }
            t.h.clear();
            t.h.extend((0..h).map(|j| (1.0 - zr[j]) * h_prev[j] + zr[j] * n[j]));
            t.c.clear();
            t.c_prev.clear();
        }
        CellKind::Lstm => {
            refill(&mut t.c_prev, c_prev);
            add_to(&mut t.gates, lp.b_hh);
            matvec_acc(&mut t.gates, lp.w_hh, h_prev);
            let (sig, g) = t.gates.split_at_mut(3 * h);
            for v in sig.iter_mut() {
                *v = sigmoid(*v);
            }
            for v in g.iter_mut() {
                *v = v.tanh();
            }
            t.c.clear();
            t.c.extend((0..h).map(|j| sig[h + j] * c_prev[j] + sig[j] * g[j]));
            t.aux.clear();
            t.aux.extend(t.c.iter().map(|c| c.tanh()));
            t.h.clear();
            t.h.extend((0..h).map(|j| sig[2 * h + j] * t.aux[j]));
        }
    }
}

/// Gradients flowing out of one cell step.
#[derive(Clone, Debug, Default)]
pub struct CellBackward {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
    da: Vec<f64>,
}

/// Back-propagates `dh` (and `dc` for LSTM) through the step recorded in `t`,
/// accumulating parameter gradients into `grads` when given.
pub(crate) fn cell_backward(
    lp: &LayerParams<'_>,
    t: &CellTrace,
    dh: &[f64],
    dc: &[f64],
    grads: Option<&mut LayerGrads<'_>>,
    out: &mut CellBackward,
) {
    let h = lp.hidden;
    out.da.clear();
    out.da.resize(lp.kind.gates() * h, 0.0);
    out.dh_prev.clear();
    out.dh_prev.resize(h, 0.0);
    out.dx.clear();
    out.dx.resize(lp.in_dim, 0.0);
    match lp.kind {
        CellKind::Gru => {
            let (z, rest) = t.gates.split_at(h);
            let (r, n) = rest.split_at(h);
            let hp = &t.h_prev;
            let (da_zr, da_n) = out.da.split_at_mut(2 * h);
            for j in 0..h {
                da_n[j] = dh[j] * z[j] * (1.0 - n[j] * n[j]);
                out.dh_prev[j] = dh[j] * (1.0 - z[j]);
            }
            let mut d_rh = vec![0.0; h];
            matvec_t_acc(&mut d_rh, &lp.w_hh[2 * h * h..], da_n);
            for j in 0..h {
                let dz = dh[j] * (n[j] - hp[j]);
                let dr = d_rh[j] * hp[j];
                out.dh_prev[j] += d_rh[j] * r[j];
                da_zr[j] = dz * z[j] * (1.0 - z[j]);
                da_zr[h + j] = dr * r[j] * (1.0 - r[j]);
            }
            matvec_t_acc(&mut out.dh_prev, &lp.w_hh[..2 * h * h], da_zr);
            if let Some(g) = grads {
                outer_acc(&mut g.w_hh[..2 * h * h], da_zr, hp);
                outer_acc(&mut g.w_hh[2 * h * h..], da_n, &t.aux);
                outer_acc(g.w_ih, &out.da, &t.x);
                add_to(g.b_ih, &out.da);
                add_to(g.b_hh, &out.da);
            }
            out.dc_prev.clear();
        }
        CellKind::Lstm => {
            let gates = &t.gates;
            out.dc_prev.clear();
            out.dc_prev.resize(h, 0.0);
            for j in 0..h {
                let (i, f, o, g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = t.aux[j];
                let dcj = dc.get(j).copied().unwrap_or(0.0) + dh[j] * o * (1.0 - tc * tc);
                let d_o = dh[j] * tc;
                out.da[j] = dcj * g * i * (1.0 - i);
                out.da[h + j] = dcj * t.c_prev[j] * f * (1.0 - f);
                out.da[2 * h + j] = d_o * o * (1.0 - o);
                out.da[3 * h + j] = dcj * i * (1.0 - g * g);
                out.dc_prev[j] = dcj * f;
            }
            matvec_t_acc(&mut out.dh_prev, lp.w_hh, &out.da);
            if let Some(g) = grads {
                outer_acc(g.w_hh, &out.da, &t.h_prev);
                outer_acc(g.w_ih, &out.da, &t.x);
                add_to(g.b_ih, &out.da);
                add_to(g.b_hh, &out.da);
            }
        }
    }
    matvec_t_acc(&mut out.dx, lp.w_ih, &out.da);
}

fn check_layer(lp: &LayerParams<'_>, kind: CellKind, x: &[f64], h_prev: &[f64]) -> Result<()> {
    if lp.kind != kind {
        return Err(Error::InvalidParams(format!(
            "layer is {:?}, not {kind:?}",
            lp.kind
        )));
    }
    if x.len() != lp.in_dim {
        return Err(Error::dim("cell input", lp.in_dim, x.len()));
    }
    if h_prev.len() != lp.hidden {
        return Err(Error::dim("cell hidden", lp.hidden, h_prev.len()));
    }
    Ok(())
}

pub fn gru_cell_forward(lp: &LayerParams<'_>, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    check_layer(lp, CellKind::Gru, x, h_prev)?;
    let mut t = CellTrace::default();
    cell_forward(lp, x, h_prev, &[], &mut t);
    Ok(t.h)
}

/// Returns `(h, c)`.
pub fn lstm_cell_forward(
    lp: &LayerParams<'_>,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_layer(lp, CellKind::Lstm, x, h_prev)?;
    if c_prev.len() != lp.hidden {
        return Err(Error::dim("cell state", lp.hidden, c_prev.len()));
    }
    let mut t = CellTrace::default();
    cell_forward(lp, x, h_prev, c_prev, &mut t);
    Ok((t.h, t.c))
}

/// Vector-Jacobian product of one cell step: gradients of `dh·h' + dc·c'`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellVjp {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

pub fn cell_vjp(
    lp: &LayerParams<'_>,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc: &[f64],
) -> Result<CellVjp> {
    check_layer(lp, lp.kind, x, h_prev)?;
    if dh.len() != lp.hidden {
        return Err(Error::dim("output gradient", lp.hidden, dh.len()));
    }
    let mut t = CellTrace::default();
    cell_forward(lp, x, h_prev, c_prev, &mut t);
    let mut out = CellVjp {
        w_ih: vec![0.0; lp.w_ih.len()],
        w_hh: vec![0.0; lp.w_hh.len()],
        b_ih: vec![0.0; lp.b_ih.len()],
        b_hh: vec![0.0; lp.b_hh.len()],
        ..CellVjp::default()
    };
    let mut g = LayerGrads {
        w_ih: &mut out.w_ih,
        w_hh: &mut out.w_hh,
        b_ih: &mut out.b_ih,
        b_hh: &mut out.b_hh,
    };
    let mut cb = CellBackward::default();
    cell_backward(lp, &t, dh, dc, Some(&mut g), &mut cb);
    out.dx = cb.dx;
    out.dh_prev = cb.dh_prev;
    out.dc_prev = cb.dc_prev;
    Ok(out)
}
