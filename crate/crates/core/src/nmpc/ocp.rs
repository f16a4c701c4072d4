//! Horizon cost, its adjoint gradient and the dynamics it is evaluated on.

use serde::{Deserialize, Serialize};

use crate::data::{Scaler, StateVariant};
use crate::error::{Error, Result};
use crate::rnn::{frozen_step, step_jacobian, HiddenState, RnnModel, StepJacobian};

/// Horizon, weights and bounds of the optimal control problem, all in scaled
/// units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSpec {
    /// Horizon length `T`; `T − 1` inputs are optimized.
    pub horizon: usize,
    pub q_s: f64,
    pub q_d: f64,
    pub q_t: f64,
    pub r_d: f64,
    pub r_m: f64,
    pub u_mean: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub x_max: f64,
    /// Weight of `Σ max(0, |x̂| − x_max)²`; `None` means `1e3 · q_s`.
    pub state_penalty: Option<f64>,
    pub control_rate: f64,
    pub max_iter: usize,
    /// Infinity norm of the projected gradient at which the solver stops.
    pub tol: f64,
    /// Correction pairs kept by the quasi-Newton solver.
    pub memory: usize,
}

impl Default for OcpSpec {
    fn default() -> Self {
        Self {
            horizon: 4,
            q_s: 5.0,
            q_d: 0.0,
            q_t: 10.0,
            r_d: 4.0,
            r_m: 5.0,
            u_mean: 0.0,
            u_min: -1.0,
            u_max: 1.0,
            x_max: 20.0 / 22.0,
            state_penalty: None,
            control_rate: 5.0,
            max_iter: 50,
            tol: 1e-6,
            memory: 8,
        }
    }
}

/// Bounds and mean pressure in bar and degrees, converted with a scaler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalBounds {
    pub u_mean_bar: f64,
    pub u_min_bar: f64,
    pub u_max_bar: f64,
    pub x_max_deg: f64,
}

impl Default for PhysicalBounds {
    fn default() -> Self {
        Self {
            u_mean_bar: 0.35,
            u_min_bar: 0.0,
            u_max_bar: 0.7,
            x_max_deg: 20.0,
        }
    }
}

fn same_on_all(values: impl Iterator<Item = f64>, what: &str) -> Result<f64> {
    let v: Vec<f64> = values.collect();
    let first = *v
        .first()
        .ok_or_else(|| Error::InvalidParams(format!("no channels for {what}")))?;
    if v.iter().any(|x| (x - first).abs() > 1e-12) {
        return Err(Error::InvalidParams(format!(
            "{what} differs between input channels after scaling"
        )));
    }
    Ok(first)
}

impl OcpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidParams("horizon must be at least 2".into()));
        }
        if !(self.u_min < self.u_max) {
            return Err(Error::InvalidParams("u_min must be below u_max".into()));
        }
        if !(self.x_max > 0.0) {
            return Err(Error::InvalidParams("x_max must be positive".into()));
        }
        let w = [
            self.q_s,
            self.q_d,
            self.q_t,
            self.r_d,
            self.r_m,
            self.penalty_weight(),
        ];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParams("weights must be non-negative".into()));
        }
        if self.tol < 0.0 || self.control_rate <= 0.0 {
            return Err(Error::InvalidParams(
                "tol must be >= 0 and control_rate > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn penalty_weight(&self) -> f64 {
        self.state_penalty.unwrap_or(1e3 * self.q_s)
    }

    pub fn n_inputs(&self) -> usize {
        self.horizon - 1
    }

    /// Replaces bounds and mean pressure with their scaled images. The state
    /// bound is the tightest over the angle channels.
    pub fn with_physical(mut self, b: &PhysicalBounds, scaler: &Scaler) -> Result<Self> {
        let inputs = scaler.n_state..scaler.channels.len();
        self.u_mean = same_on_all(
            inputs
                .clone()
                .map(|i| scaler.apply_channel(i, b.u_mean_bar)),
            "u_mean",
        )?;
        self.u_min = same_on_all(
            inputs.clone().map(|i| scaler.apply_channel(i, b.u_min_bar)),
            "u_min",
        )?;
        self.u_max = same_on_all(
            inputs.map(|i| scaler.apply_channel(i, b.u_max_bar)),
            "u_max",
        )?;
        let n_angles = match scaler.variant {
            StateVariant::Position => scaler.n_state,
            StateVariant::Full => scaler.n_state / 2,
        };
        self.x_max = (0..n_angles)
            .map(|i| {
                scaler
                    .apply_channel(i, b.x_max_deg)
                    .abs()
                    .min(scaler.apply_channel(i, -b.x_max_deg).abs())
            })
            .fold(f64::INFINITY, f64::min);
        self.validate()?;
        Ok(self)
    }
}

/// Desired states for horizon steps `1..=T`, scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceWindow {
    pub x_des: Vec<Vec<f64>>,
}

impl ReferenceWindow {
    pub fn new(x_des: Vec<Vec<f64>>, x_max: f64) -> Result<Self> {
        for (k, x) in x_des.iter().enumerate() {
            if let Some(v) = x.iter().find(|v| v.abs() > x_max + 1e-12) {
                return Err(Error::InvalidParams(format!(
                    "reference step {} component {v} exceeds x_max = {x_max}",
                    k + 1
                )));
            }
        }
        Ok(Self { x_des })
    }

    /// `x` held for all `T` steps.
    pub fn constant(x: &[f64], horizon: usize) -> Self {
        Self {
            x_des: vec![x.to_vec(); horizon],
        }
    }
}

/// Discrete dynamics `x̂_{k+1} = f(x̂_k, u_k)` with Jacobians.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    fn step_jacobian(&self, x: &[f64], u: &[f64]) -> StepJacobian;
}

/// The recurrent model with its hidden state held fixed.
#[derive(Clone, Copy, Debug)]
pub struct FrozenRnn<'a> {
    pub model: &'a RnnModel,
    pub h: &'a HiddenState,
}

impl Dynamics for FrozenRnn<'_> {
    fn state_dim(&self) -> usize {
        self.model.arch.state_dim
    }

    fn input_dim(&self) -> usize {
        self.model.arch.control_dim()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        frozen_step(self.model, x, u, self.h)
    }

    fn step_jacobian(&self, x: &[f64], u: &[f64]) -> StepJacobian {
        step_jacobian(self.model, x, u, self.h)
    }
}

/// `x̂_{k+1} = A x̂_k + B u_k + c` with row-major `A` and `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearStub {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl LinearStub {
    /// `x̂_{k+1} = x̂_k` regardless of input.
    pub fn identity(n: usize, m: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        Self {
            n,
            m,
            a,
            b: vec![0.0; n * m],
            c: vec![0.0; n],
        }
    }

    /// `x̂_{k+1} = x̂_k + B u_k`.
    pub fn integrator(b: Vec<f64>, n: usize, m: usize) -> Self {
        Self {
            b,
            ..Self::identity(n, m)
        }
    }

    /// First-order per-joint response to the bellows difference of that joint:
    /// `q_{k+1} = a q_k + g (u_{k,2j} − u_{k,2j+1})`.
    pub fn antagonistic(n_joints: usize, a: f64, g: f64) -> Self {
        let (n, m) = (n_joints, 2 * n_joints);
        let mut s = Self::identity(n, m);
        for j in 0..n {
            s.a[j * n + j] = a;
            s.b[j * m + 2 * j] = g;
            s.b[j * m + 2 * j + 1] = -g;
        }
        s
    }
}

impl Dynamics for LinearStub {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let ax: f64 = (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum();
                let bu: f64 = (0..self.m).map(|j| self.b[i * self.m + j] * u[j]).sum();
                ax + bu + self.c[i]
            })
            .collect()
    }

    fn step_jacobian(&self, x: &[f64], u: &[f64]) -> StepJacobian {
        StepJacobian {
            x_next: self.step(x, u),
            jx: self.a.clone(),
            ju: self.b.clone(),
        }
    }
}

/// Per-joint `u_{j1} + u_{j2} − 2 u_mean` for inputs ordered
/// `[p11, p12, p21, p22, ...]`.
pub fn stiffness_residual(u: &[f64], u_mean: f64) -> Vec<f64> {
    u.chunks_exact(2)
        .map(|p| p[0] + p[1] - 2.0 * u_mean)
        .collect()
}

/// Everything the cost needs besides the decision variables.
#[derive(Clone, Copy, Debug)]
pub struct OcpContext<'a> {
    pub x0: &'a [f64],
    pub u_prev: &'a [f64],
    pub reference: &'a ReferenceWindow,
    pub spec: &'a OcpSpec,
}

impl OcpContext<'_> {
    pub fn check<D: Dynamics + ?Sized>(&self, model: &D, u_seq: &[Vec<f64>]) -> Result<()> {
        let (n, m, t) = (model.state_dim(), model.input_dim(), self.spec.horizon);
        if self.x0.len() != n {
            return Err(Error::dim("x0", n, self.x0.len()));
        }
        if self.u_prev.len() != m {
            return Err(Error::dim("u_prev", m, self.u_prev.len()));
        }
        if u_seq.len() != t - 1 {
            return Err(Error::dim("input steps", t - 1, u_seq.len()));
        }
        if let Some(u) = u_seq.iter().find(|u| u.len() != m) {
            return Err(Error::dim("input width", m, u.len()));
        }
        if self.reference.x_des.len() != t {
            return Err(Error::dim("reference steps", t, self.reference.x_des.len()));
        }
        if let Some(x) = self.reference.x_des.iter().find(|x| x.len() != n) {
            return Err(Error::dim("reference width", n, x.len()));
        }
        if m % 2 != 0 {
            return Err(Error::InvalidParams(
                "input channels must come in bellows pairs".into(),
            ));
        }
        Ok(())
    }
}

/// Input driving horizon step `k ∈ 1..=T`: `u_k`, with the last input held
/// for the terminal step.
fn input_for(u_seq: &[Vec<f64>], k: usize) -> &[f64] {
    &u_seq[(k - 1).min(u_seq.len() - 1)]
}

/// Predicted states `x̂_0 = x0, x̂_1, …, x̂_T` under frozen dynamics.
pub fn predict<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    u_seq: &[Vec<f64>],
    horizon: usize,
) -> Vec<Vec<f64>> {
    let mut xs = Vec::with_capacity(horizon + 1);
    xs.push(x0.to_vec());
    for k in 1..=horizon {
        let next = model.step(&xs[k - 1], input_for(u_seq, k));
        xs.push(next);
    }
    xs
}

fn sq(v: f64) -> f64 {
    v * v
}

fn cost_of(xs: &[Vec<f64>], u_seq: &[Vec<f64>], ctx: &OcpContext<'_>) -> f64 {
    let s = ctx.spec;
    let t = s.horizon;
    let w = s.penalty_weight();
    let mut c = 0.0;
    for k in 1..t {
        let (x, xp, xd) = (&xs[k], &xs[k - 1], &ctx.reference.x_des[k - 1]);
        let u = &u_seq[k - 1];
        let up = if k == 1 {
            ctx.u_prev
        } else {
            &u_seq[k - 2][..]
        };
        c += s.q_s * x.iter().zip(xd).map(|(a, b)| sq(b - a)).sum::<f64>();
        c += s.q_d * x.iter().zip(xp).map(|(a, b)| sq(a - b)).sum::<f64>();
        c += s.r_d * u.iter().zip(up).map(|(a, b)| sq(a - b)).sum::<f64>();
        c += s.r_m
            * stiffness_residual(u, s.u_mean)
                .iter()
                .map(|r| r * r)
                .sum::<f64>();
    }
    c += s.q_t
        * xs[t]
            .iter()
            .zip(&ctx.reference.x_des[t - 1])
            .map(|(a, b)| sq(b - a))
            .sum::<f64>();
    if w > 0.0 {
        for x in &xs[1..] {
            c += w * x
                .iter()
                .map(|v| sq((v.abs() - s.x_max).max(0.0)))
                .sum::<f64>();
        }
    }
    c
}

/// Cost of `u_seq` and the predicted states `x̂_0..=x̂_T`.
pub fn ocp_cost<D: Dynamics + ?Sized>(
    u_seq: &[Vec<f64>],
    ctx: &OcpContext<'_>,
    model: &D,
) -> Result<(f64, Vec<Vec<f64>>)> {
    ctx.check(model, u_seq)?;
    let xs = predict(model, ctx.x0, u_seq, ctx.spec.horizon);
    Ok((cost_of(&xs, u_seq, ctx), xs))
}

pub(crate) fn cost_unchecked<D: Dynamics + ?Sized>(
    u_seq: &[Vec<f64>],
    ctx: &OcpContext<'_>,
    model: &D,
) -> f64 {
    let xs = predict(model, ctx.x0, u_seq, ctx.spec.horizon);
    cost_of(&xs, u_seq, ctx)
}

/// Cost and its exact gradient with respect to every entry of `u_seq`,
/// obtained by an adjoint sweep through the frozen rollout.
pub fn ocp_gradient<D: Dynamics + ?Sized>(
    u_seq: &[Vec<f64>],
    ctx: &OcpContext<'_>,
    model: &D,
) -> Result<(f64, Vec<Vec<f64>>)> {
    ctx.check(model, u_seq)?;
    Ok(gradient_unchecked(u_seq, ctx, model))
}

pub(crate) fn gradient_unchecked<D: Dynamics + ?Sized>(
    u_seq: &[Vec<f64>],
    ctx: &OcpContext<'_>,
    model: &D,
) -> (f64, Vec<Vec<f64>>) {
    let s = ctx.spec;
    let (t, n, m) = (s.horizon, model.state_dim(), model.input_dim());
    let w = s.penalty_weight();
    let mut xs = vec![ctx.x0.to_vec()];
    let mut jacs = Vec::with_capacity(t);
    for k in 1..=t {
        let j = model.step_jacobian(&xs[k - 1], input_for(u_seq, k));
        xs.push(j.x_next.clone());
        jacs.push(j);
    }
    let cost = cost_of(&xs, u_seq, ctx);

    // Direct partial derivatives with respect to x̂_k, k = 1..=T.
    let mut gx = vec![vec![0.0; n]; t + 1];
    for k in 1..t {
        let xd = &ctx.reference.x_des[k - 1];
        for i in 0..n {
            gx[k][i] += 2.0 * s.q_s * (xs[k][i] - xd[i]);
            let d = xs[k][i] - xs[k - 1][i];
            gx[k][i] += 2.0 * s.q_d * d;
            gx[k - 1][i] -= 2.0 * s.q_d * d;
        }
    }
    for i in 0..n {
        gx[t][i] += 2.0 * s.q_t * (xs[t][i] - ctx.reference.x_des[t - 1][i]);
    }
    if w > 0.0 {
        for k in 1..=t {
            for i in 0..n {
                let v = xs[k][i];
                let over = (v.abs() - s.x_max).max(0.0);
                gx[k][i] += 2.0 * w * over * v.signum();
            }
        }
    }

    let mut gu = vec![vec![0.0; m]; t - 1];
    for k in 1..t {
        let u = &u_seq[k - 1];
        let up = if k == 1 {
            ctx.u_prev
        } else {
            &u_seq[k - 2][..]
        };
        for i in 0..m {
            let d = u[i] - up[i];
            gu[k - 1][i] += 2.0 * s.r_d * d;
            if k >= 2 {
                gu[k - 2][i] -= 2.0 * s.r_d * d;
            }
        }
        for (j, r) in stiffness_residual(u, s.u_mean).into_iter().enumerate() {
            gu[k - 1][2 * j] += 2.0 * s.r_m * r;
            gu[k - 1][2 * j + 1] += 2.0 * s.r_m * r;
        }
    }

    // Adjoint sweep: λ_k = ∂C/∂x̂_k including downstream effects.
    let mut lam = gx[t].clone();
    for k in (1..=t).rev() {
        let jac = &jacs[k - 1];
        let ui = (k - 1).min(t - 2);
        for r in 0..n {
            let l = lam[r];
            if l != 0.0 {
                for c in 0..m {
                    gu[ui][c] += jac.ju[r * m + c] * l;
                }
            }
        }
        if k > 1 {
            let mut prev = gx[k - 1].clone();
            for r in 0..n {
                let l = lam[r];
                if l != 0.0 {
                    for c in 0..n {
                        prev[c] += jac.jx[r * n + c] * l;
                    }
                }
            }
            lam = prev;
        }
    }
    (cost, gu)
}
