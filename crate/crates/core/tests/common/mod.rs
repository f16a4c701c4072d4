//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

/// Weights and bounds in the order the oracles need them.
#[derive(Clone, Copy, Debug)]
pub struct Weights {
    pub q_s: f64,
    pub q_d: f64,
    pub q_t: f64,
    pub r_d: f64,
    pub r_m: f64,
    pub u_mean: f64,
    pub x_max: f64,
    pub w_pen: f64,
}

/// Dense affine dynamics `x' = A x + B u + c`.
pub struct Affine {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Affine {
    fn next(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = self.c.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                out[i] += self.a[i * self.n + j] * x[j];
            }
            for j in 0..self.m {
                out[i] += self.b[i * self.m + j] * u[j];
            }
        }
        out
    }
}

/// Term-by-term horizon cost written straight from its definition.
pub fn naive_cost(
    dyn_: &Affine,
    w: &Weights,
    x0: &[f64],
    u_prev: &[f64],
    x_des: &[Vec<f64>],
    u_seq: &[Vec<f64>],
) -> f64 {
    let t = x_des.len();
    let mut xs = vec![x0.to_vec()];
    for k in 1..=t {
        let u = if k < t { &u_seq[k - 1] } else { &u_seq[t - 2] };
        let next = dyn_.next(&xs[k - 1], u);
        xs.push(next);
    }
    let mut total = 0.0;
    for k in 1..t {
        let mut track = 0.0;
        let mut smooth = 0.0;
        for i in 0..dyn_.n {
            track += (x_des[k - 1][i] - xs[k][i]).powi(2);
            smooth += (xs[k][i] - xs[k - 1][i]).powi(2);
        }
        let prev = if k == 1 { u_prev } else { &u_seq[k - 2][..] };
        let mut du = 0.0;
        for i in 0..dyn_.m {
            du += (u_seq[k - 1][i] - prev[i]).powi(2);
        }
        let mut stiff = 0.0;
        for j in 0..dyn_.m / 2 {
            stiff += (u_seq[k - 1][2 * j] + u_seq[k - 1][2 * j + 1] - 2.0 * w.u_mean).powi(2);
        }
        total += w.q_s * track + w.q_d * smooth + w.r_d * du + w.r_m * stiff;
    }
    for i in 0..dyn_.n {
        total += w.q_t * (x_des[t - 1][i] - xs[t][i]).powi(2);
    }
    for x in &xs[1..] {
        for v in x {
            let over = v.abs() - w.x_max;
            if over > 0.0 {
                total += w.w_pen * over * over;
            }
        }
    }
    total
}

/// Unconstrained minimizer of the horizon cost for `x' = x + B u`, from the
/// normal equations of the stacked weighted residuals.
pub fn integrator_qp_minimizer(
    b: &[f64],
    n: usize,
    m: usize,
    w: &Weights,
    x0: &[f64],
    u_prev: &[f64],
    x_des: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let t = x_des.len();
    let nv = (t - 1) * m;
    // s[k] maps U to x_k − x0.
    let mut s = vec![DMatrix::<f64>::zeros(n, nv)];
    for k in 1..=t {
        let mut sk = s[k - 1].clone();
        let col = (k.min(t - 1) - 1) * m;
        for i in 0..n {
            for j in 0..m {
                sk[(i, col + j)] += b[i * m + j];
            }
        }
        s.push(sk);
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut push = |weight: f64, row: Vec<f64>, r0: f64| {
        let sw = weight.sqrt();
        rows.push((row.into_iter().map(|v| v * sw).collect(), r0 * sw));
    };
    for k in 1..t {
        for i in 0..n {
            let row: Vec<f64> = (0..nv).map(|c| s[k][(i, c)]).collect();
            push(w.q_s, row, x0[i] - x_des[k - 1][i]);
            let row: Vec<f64> = (0..nv).map(|c| s[k][(i, c)] - s[k - 1][(i, c)]).collect();
            push(w.q_d, row, 0.0);
        }
        for i in 0..m {
            let mut row = vec![0.0; nv];
            row[(k - 1) * m + i] = 1.0;
            let r0 = if k == 1 {
                -u_prev[i]
            } else {
                row[(k - 2) * m + i] = -1.0;
                0.0
            };
            push(w.r_d, row, r0);
        }
        for j in 0..m / 2 {
            let mut row = vec![0.0; nv];
            row[(k - 1) * m + 2 * j] = 1.0;
            row[(k - 1) * m + 2 * j + 1] = 1.0;
            push(w.r_m, row, -2.0 * w.u_mean);
        }
    }
    for i in 0..n {
        let row: Vec<f64> = (0..nv).map(|c| s[t][(i, c)]).collect();
        push(w.q_t, row, x0[i] - x_des[t - 1][i]);
    }
    let r = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]);
    let r0 = DVector::from_iterator(rows.len(), rows.iter().map(|(_, v)| *v));
    let h = r.transpose() * &r;
    let rhs = -(r.transpose() * r0);
    let sol = h
        .cholesky()
        .expect("positive definite normal matrix")
        .solve(&rhs);
    sol.as_slice().chunks(m).map(<[f64]>::to_vec).collect()
}
