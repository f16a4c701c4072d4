//! Plant-in-the-loop simulation of NMPC and PI control.

use serde::{Deserialize, Serialize};

use super::pi::{pi_step, PiGains, PiState};
use super::reference::Reference;
use super::stream_seed;
use super::trajectory::{CycleRecord, Phase, RunMetadata, TrajectoryLog};
use crate::data::gen_ramp_excitation;
use crate::error::{Error, Result};
use crate::nmpc::{mpc_step, MpcState, OcpSpec, ReferenceWindow};
use crate::plant::Plant;
use crate::rnn::RnnModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopOptions {
    pub control_rate: f64,
    pub warmup_s: f64,
    /// Length of the control phase in seconds.
    pub duration_s: f64,
    /// Warm-up commands stay within `u_mean ± warmup_amplitude` bar.
    pub warmup_amplitude: f64,
    pub u_mean_bar: f64,
    /// Seeds encoder noise and the warm-up excitation.
    pub seed: u64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            control_rate: 5.0,
            warmup_s: 50.0,
            duration_s: 120.0,
            warmup_amplitude: 0.1,
            u_mean_bar: 0.35,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    Nmpc {
        model: &'a RnnModel,
        spec: &'a OcpSpec,
    },
    /// Runs at the plant rate.
    Pi { gains: &'a [PiGains] },
}

impl Controller<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Nmpc { .. } => "nmpc",
            Controller::Pi { .. } => "pi",
        }
    }
}

fn control_window(
    reference: &Reference,
    t: f64,
    rate: f64,
    spec: &OcpSpec,
    scaler: &crate::data::Scaler,
) -> Result<ReferenceWindow> {
    let x_des = (1..=spec.horizon)
        .map(|k| {
            scaler
                .scale_state(&reference.at(t + k as f64 / rate))
                .into_iter()
                .map(|v| v.clamp(-spec.x_max, spec.x_max))
                .collect()
        })
        .collect();
    ReferenceWindow::new(x_des, spec.x_max)
}

fn scaled_measurement(scaler: &crate::data::Scaler, q: &[f64]) -> Vec<f64> {
    scaler
        .scale_state(q)
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect()
}

/// Warm-up followed by `duration_s` of closed-loop tracking of `reference`,
/// one record per control period.
///
/// The plant is integrated at its own step; controller outputs are held over
/// each control period, except for PI which is evaluated every plant step.
/// During warm-up both controllers see the same gentle excitation; the NMPC
/// only updates its hidden state from it.
pub fn run_closed_loop(
    plant: &Plant,
    controller: Controller<'_>,
    reference: &Reference,
    opts: &LoopOptions,
) -> Result<TrajectoryLog> {
    let pr = plant.params();
    let n = pr.n_joints;
    if reference.n_joints() != n {
        return Err(Error::dim("reference joints", n, reference.n_joints()));
    }
    let period = 1.0 / opts.control_rate;
    let ratio = period / pr.sim_dt;
    let substeps = ratio.round();
    if substeps < 1.0 || (ratio - substeps).abs() > 1e-9 * ratio {
        return Err(Error::IncompatibleRates {
            source_hz: 1.0 / pr.sim_dt,
            target_hz: opts.control_rate,
        });
    }
    let substeps = substeps as usize;
    let n_warm = (opts.warmup_s * opts.control_rate).round() as usize;
    let n_ctrl = (opts.duration_s * opts.control_rate + 1e-9).floor() as usize;
    let limits = (0.0, pr.pressure_range);

    let seg = 4.0;
    let warm_len = (opts.warmup_s / seg).ceil().max(1.0) * seg;
    let a = opts.warmup_amplitude.max(0.0);
    let excitation = gen_ramp_excitation(
        n,
        1.0,
        seg - 1.0,
        warm_len,
        2.0 * a,
        stream_seed(opts.seed, u64::MAX),
    )?;

    let mut mpc = match controller {
        Controller::Nmpc { model, spec } => {
            spec.validate()?;
            if model.arch.state_dim != n || model.arch.control_dim() != 2 * n {
                return Err(Error::dim("model joints", n, model.arch.state_dim));
            }
            if model.scaler.is_none() {
                return Err(Error::InvalidParams(
                    "the control model carries no scaler".into(),
                ));
            }
            Some(MpcState::new(model, spec))
        }
        Controller::Pi { gains } => {
            if gains.is_empty() || gains.iter().any(|g| !(g.kp >= 0.0 && g.ki >= 0.0)) {
                return Err(Error::InvalidParams("PI gains must be non-negative".into()));
            }
            None
        }
    };
    let mut pi = PiState::new(n);

    let mut records = Vec::with_capacity(n_warm + n_ctrl);
    let mut solve_times = Vec::new();
    let mut state = plant.init_state();
    let mut cmd = vec![0.0; 2 * n];
    for c in 0..n_warm + n_ctrl {
        let t = c as f64 * period;
        let step0 = (c * substeps) as u64;
        let m = plant.measure(&state, stream_seed(opts.seed, step0));
        let mut rec = CycleRecord {
            t,
            phase: Phase::Warmup,
            reference: reference.at(0.0),
            q: m.q_meas.clone(),
            u: Vec::new(),
            cost: 0.0,
            iterations: 0,
            pg_norm: 0.0,
            fallback: false,
        };
        if c < n_warm {
            excitation.value_at(t, &mut cmd);
            for v in &mut cmd {
                *v += opts.u_mean_bar - a;
            }
            if let (Some(mpc), Controller::Nmpc { model, .. }) = (mpc.as_mut(), controller) {
                let s = model.scaler.as_ref().expect("checked above");
                mpc.observe_open_loop(
                    model,
                    &scaled_measurement(s, &m.q_meas),
                    &s.scale_input(&cmd),
                );
            }
            state = plant.step(&state, &cmd, period)?;
        } else {
            let tc = t - n_warm as f64 * period;
            rec.phase = Phase::Control;
            rec.reference = reference.at(tc);
            match controller {
                Controller::Nmpc { model, spec } => {
                    let s = model.scaler.as_ref().expect("checked above");
                    let mpc = mpc.as_mut().expect("created for NMPC");
                    let window = control_window(reference, tc, opts.control_rate, spec, s)?;
                    let out =
                        mpc_step(mpc, &scaled_measurement(s, &m.q_meas), &window, spec, model)?;
                    cmd = out
                        .u_bar
                        .iter()
                        .map(|p| p.clamp(limits.0, limits.1))
                        .collect();
                    rec.cost = out.telemetry.cost;
                    rec.iterations = out.telemetry.iterations;
                    rec.pg_norm = out.telemetry.pg_norm;
                    rec.fallback = out.telemetry.fallback;
                    solve_times.push(out.telemetry.solve_time_s);
                    state = plant.step(&state, &cmd, period)?;
                }
                Controller::Pi { gains } => {
                    let mut r = vec![0.0; n];
                    for s in 0..substeps {
                        let q = if s == 0 {
                            m.q_meas.clone()
                        } else {
                            plant
                                .measure(&state, stream_seed(opts.seed, step0 + s as u64))
                                .q_meas
                        };
                        reference.value_at(tc + s as f64 * pr.sim_dt, &mut r);
                        let u = pi_step(&mut pi, &q, &r, gains, opts.u_mean_bar, limits, pr.sim_dt);
                        if s == 0 {
                            cmd = u.clone();
                        }
                        state = plant.step(&state, &u, pr.sim_dt)?;
                    }
                }
            }
        }
        rec.u = cmd.clone();
        records.push(rec);
    }

    Ok(TrajectoryLog {
        meta: RunMetadata {
            controller: controller.name().into(),
            checkpoint: None,
            config_hash: None,
            config: None,
            seed: opts.seed,
            reference_seed: 0,
            control_rate: opts.control_rate,
            warmup_s: n_warm as f64 * period,
            duration_s: n_ctrl as f64 * period,
            n_joints: n,
        },
        records,
        solve_times,
    })
}
