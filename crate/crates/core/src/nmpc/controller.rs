//! Receding-horizon cycle around the recurrent model.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ocp::{FrozenRnn, OcpContext, OcpSpec, ReferenceWindow};
use super::solver::ocp_solve;
use crate::error::{Error, Result};
use crate::rnn::{advance_hidden, HiddenState, RnnModel};

/// Everything carried from one control cycle to the next, scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcState {
    pub h: HiddenState,
    pub u_prev: Vec<f64>,
    pub warm: Vec<Vec<f64>>,
    /// Measurement of the previous cycle; `None` before the first cycle.
    pub x_prev: Option<Vec<f64>>,
    pub cycle: u64,
}

impl MpcState {
    /// Zero hidden state and every bellows at the mean pressure.
    pub fn new(model: &RnnModel, spec: &OcpSpec) -> Self {
        let u = vec![spec.u_mean; model.arch.control_dim()];
        Self::with_hidden(HiddenState::zeros(&model.arch), u, spec)
    }

    /// Starts from a hidden state warmed up elsewhere and the input applied
    /// last.
    pub fn with_hidden(h: HiddenState, u_prev: Vec<f64>, spec: &OcpSpec) -> Self {
        Self {
            h,
            warm: vec![u_prev.clone(); spec.n_inputs()],
            u_prev,
            x_prev: None,
            cycle: 0,
        }
    }

    /// Feeds a measured state and the input applied with it through the
    /// model, the same update a control cycle performs.
    pub fn observe(&mut self, model: &RnnModel, x: &[f64], u: &[f64]) {
        self.h = advance_hidden(model, x, u, &self.h);
    }
}

impl MpcState {
    /// Records a cycle in which `u` was applied without solving, e.g. while
    /// the hidden state is being warmed up.
    pub fn observe_open_loop(&mut self, model: &RnnModel, x: &[f64], u: &[f64]) {
        if let Some(x_prev) = self.x_prev.take() {
            let u_prev = std::mem::take(&mut self.u_prev);
            self.observe(model, &x_prev, &u_prev);
        }
        self.x_prev = Some(x.to_vec());
        self.u_prev = u.to_vec();
        self.warm.iter_mut().for_each(|w| w.copy_from_slice(u));
        self.cycle += 1;
    }
}

/// Per-cycle record. `solve_time_s` is wall-clock and varies between runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub cycle: u64,
    pub cost: f64,
    pub iterations: usize,
    pub pg_norm: f64,
    pub converged: bool,
    /// The solve failed and the previous input was held.
    pub fallback: bool,
    pub solve_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcOutput {
    /// Applied input, scaled.
    pub u: Vec<f64>,
    /// Applied input in bar; equal to `u` when the model carries no scaler.
    pub u_bar: Vec<f64>,
    /// Predicted states `x̂_0..=x̂_T`, scaled.
    pub predicted: Vec<Vec<f64>>,
    pub telemetry: Telemetry,
}

/// One control cycle: hidden-state update with the previous measurement and
/// applied input, horizon solve from `x_meas` with that hidden state frozen,
/// shift of the solution into the next warm start. Returns `u_1`.
pub fn mpc_step(
    mpc: &mut MpcState,
    x_meas: &[f64],
    reference: &ReferenceWindow,
    spec: &OcpSpec,
    model: &RnnModel,
) -> Result<MpcOutput> {
    let arch = &model.arch;
    if x_meas.len() != arch.state_dim {
        return Err(Error::dim("measurement", arch.state_dim, x_meas.len()));
    }
    mpc.h.check(arch)?;
    if mpc.warm.len() != spec.n_inputs() {
        return Err(Error::dim("warm start", spec.n_inputs(), mpc.warm.len()));
    }
    if let Some(x_prev) = mpc.x_prev.take() {
        let u_prev = mpc.u_prev.clone();
        mpc.observe(model, &x_prev, &u_prev);
    }
    let x0: Vec<f64> = x_meas.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let warm: Vec<Vec<f64>> = mpc
        .warm
        .iter()
        .map(|u| u.iter().map(|v| v.clamp(spec.u_min, spec.u_max)).collect())
        .collect();

    let ctx = OcpContext {
        x0: &x0,
        u_prev: &mpc.u_prev,
        reference,
        spec,
    };
    let dynamics = FrozenRnn { model, h: &mpc.h };
    let start = Instant::now();
    let solved = ocp_solve(&warm, &ctx, &dynamics);
    let solve_time_s = start.elapsed().as_secs_f64();

    let (u, predicted, telemetry) = match solved {
        Ok(sol) => {
            let (_, predicted) = super::ocp::ocp_cost(&sol.u_seq, &ctx, &dynamics)?;
            let u = sol.u_seq[0].clone();
            let mut next = sol.u_seq[1..].to_vec();
            next.push(sol.u_seq[sol.u_seq.len() - 1].clone());
            mpc.warm = next;
            let r = sol.report;
            let t = Telemetry {
                cycle: mpc.cycle,
                cost: r.cost,
                iterations: r.iterations,
                pg_norm: r.pg_norm,
                converged: r.converged,
                fallback: false,
                solve_time_s,
            };
            (u, predicted, t)
        }
        Err(Error::NonfiniteCost) => {
            log::warn!(
                "cycle {}: nonfinite cost, holding previous input",
                mpc.cycle
            );
            mpc.warm = vec![mpc.u_prev.clone(); spec.n_inputs()];
            let t = Telemetry {
                cycle: mpc.cycle,
                cost: f64::NAN,
                iterations: 0,
                pg_norm: f64::NAN,
                converged: false,
                fallback: true,
                solve_time_s,
            };
            (mpc.u_prev.clone(), vec![x0.clone()], t)
        }
        Err(e) => return Err(e),
    };

    mpc.u_prev = u.clone();
    mpc.x_prev = Some(x0);
    mpc.cycle += 1;
    let u_bar = match &model.scaler {
        Some(s) => s.unscale_input(&u),
        None => u.clone(),
    };
    Ok(MpcOutput {
        u,
        u_bar,
        predicted,
        telemetry,
    })
}
