//! Simulated articulated soft robot used as data source and closed-loop ground truth.
//!
//! Each joint is driven by two antagonistic bellows. Bellows pressures follow the
//! commanded pressures through a first-order lag, the pressure difference produces
//! a joint torque, and the joint behaves as a damped spring with smoothed Coulomb
//! friction, a Bouc–Wen hysteresis operator, weak coupling to its neighbours and
//! stiff end stops at the angle limit. The state is advanced with fixed-step RK4.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bouc–Wen coefficients: `ḣ = a·q̇ − β·|q̇|·h − γ·q̇·|h|`, torque `−α·h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoucWen {
    pub a: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Hysteretic torque gain in N·m/rad.
    pub alpha: f64,
}

impl Default for BoucWen {
    fn default() -> Self {
        Self {
            a: 1.0,
            beta: 10.0,
            gamma: 10.0,
            alpha: 0.3,
        }
    }
}

impl BoucWen {
    /// Magnitude `h` converges to under sustained monotone motion.
    pub fn saturation(&self) -> f64 {
        if self.beta + self.gamma > 0.0 {
            self.a / (self.beta + self.gamma)
        } else {
            0.0
        }
    }
}

/// Plant parameters in SI units unless noted otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub n_joints: usize,
    /// Valve pressure-loop lag in seconds.
    pub pressure_time_constant: f64,
    /// Differential-pressure torque gain in N·m/bar.
    pub torque_gain: f64,
    pub joint_stiffness: f64,
    pub joint_damping: f64,
    pub inertia: f64,
    pub coulomb_level: f64,
    /// Velocity scale of the `tanh` friction smoothing in rad/s.
    pub coulomb_smoothing: f64,
    pub bouc_wen: BoucWen,
    /// Spring coupling to neighbouring joints in N·m/rad.
    pub coupling_gain: f64,
    /// Hard angle range in rad (symmetric).
    pub angle_limit: f64,
    pub softstop_stiffness: f64,
    /// Upper bellows pressure in bar (lower bound is 0).
    pub pressure_range: f64,
    /// Encoder resolution in degrees.
    pub encoder_quantum: f64,
    /// Encoder noise standard deviation in degrees.
    pub noise_std: f64,
    /// Integration step in seconds.
    pub sim_dt: f64,
    /// Gravity torque amplitude `g·sin(q)` in N·m; 0 disables gravity.
    pub gravity_torque: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        let joint_stiffness = 1.0;
        let angle_limit = 20f64.to_radians();
        let pressure_range = 0.7;
        let bouc_wen = BoucWen::default();
        // Full differential pressure holds the joint at the angle limit.
        let torque_gain = (joint_stiffness * angle_limit + bouc_wen.alpha * bouc_wen.saturation())
            / pressure_range;
        Self {
            n_joints: 5,
            pressure_time_constant: 0.04,
            torque_gain,
            joint_stiffness,
            joint_damping: 0.15,
            inertia: 0.015,
            coulomb_level: 0.005,
            coulomb_smoothing: 0.01,
            bouc_wen,
            coupling_gain: 0.05 * joint_stiffness,
            angle_limit,
            softstop_stiffness: 300.0,
            pressure_range,
            encoder_quantum: 0.05,
            noise_std: 0.02,
            sim_dt: 1e-3,
            gravity_torque: 0.0,
        }
    }
}

impl PlantParams {
    pub fn with_joints(n_joints: usize) -> Self {
        Self {
            n_joints,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if self.n_joints < 1 {
            return bad("n_joints must be at least 1");
        }
        if !(0.010..=0.080).contains(&self.pressure_time_constant) {
            return bad("pressure_time_constant must lie within [0.010, 0.080] s");
        }
        let gains = [
            self.torque_gain,
            self.joint_stiffness,
            self.joint_damping,
            self.coulomb_level,
            self.bouc_wen.a,
            self.bouc_wen.beta,
            self.bouc_wen.gamma,
            self.bouc_wen.alpha,
            self.coupling_gain,
            self.softstop_stiffness,
            self.encoder_quantum,
            self.noise_std,
            self.gravity_torque,
        ];
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("all gains must be finite and non-negative");
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return bad("inertia must be positive");
        }
        if !(self.coulomb_smoothing > 0.0) {
            return bad("coulomb_smoothing must be positive");
        }
        if !(self.angle_limit > 0.0 && self.pressure_range > 0.0) {
            return bad("angle_limit and pressure_range must be positive");
        }
        if !(self.sim_dt > 0.0 && self.sim_dt <= 1e-3) {
            return bad("sim_dt must lie within (0, 1 ms]");
        }
        Ok(())
    }

    pub fn n_bellows(&self) -> usize {
        2 * self.n_joints
    }
}

/// Continuous plant state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Joint angles in rad.
    pub q: Vec<f64>,
    /// Joint velocities in rad/s.
    pub qd: Vec<f64>,
    /// Bellows pressures in bar, ordered `[p11, p12, p21, p22, ...]`.
    pub p: Vec<f64>,
    /// Bouc–Wen internal state per joint.
    pub h_bw: Vec<f64>,
    pub t: f64,
}

impl PlantState {
    pub fn kinetic_energy(&self, params: &PlantParams) -> f64 {
        0.5 * params.inertia * self.qd.iter().map(|v| v * v).sum::<f64>()
    }

    fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(&self.qd)
            .chain(&self.p)
            .chain(&self.h_bw)
            .all(|v| v.is_finite())
    }
}

/// Encoder and pressure-sensor readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Joint angles in degrees.
    pub q_meas: Vec<f64>,
    /// Bellows pressures in bar.
    pub p_meas: Vec<f64>,
    pub t: f64,
}

/// Validated plant model.
#[derive(Clone, Debug)]
pub struct Plant {
    params: PlantParams,
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    /// Rest state: everything zero.
    pub fn init_state(&self) -> PlantState {
        let n = self.params.n_joints;
        PlantState {
            q: vec![0.0; n],
            qd: vec![0.0; n],
            p: vec![0.0; 2 * n],
            h_bw: vec![0.0; n],
            t: 0.0,
        }
    }

    /// Advances `state` by `dt` seconds holding the commanded pressures `u_des`.
    ///
    /// `dt` must be an integer multiple of `sim_dt`; commands are clipped to the
    /// pressure range.
    pub fn step(&self, state: &PlantState, u_des: &[f64], dt: f64) -> Result<PlantState> {
        let pr = &self.params;
        let n = pr.n_joints;
        if u_des.len() != 2 * n {
            return Err(Error::dim("u_des", 2 * n, u_des.len()));
        }
        let substeps = (dt / pr.sim_dt).round();
        if substeps < 0.0 || (substeps * pr.sim_dt - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::InvalidParams(format!(
                "dt = {dt} s is not an integer multiple of sim_dt = {} s",
                pr.sim_dt
            )));
        }
        let u: Vec<f64> = u_des
            .iter()
            .map(|v| v.clamp(0.0, pr.pressure_range))
            .collect();

        let mut y = pack(state);
        let mut scratch = Rk4Scratch::new(y.len());
        for _ in 0..substeps as usize {
            rk4_step(pr, &mut y, &u, pr.sim_dt, &mut scratch);
        }
        let mut next = unpack(&y, n, state.t + substeps * pr.sim_dt);
        for p in &mut next.p {
            *p = p.clamp(0.0, pr.pressure_range);
        }
        if !next.is_finite() {
            return Err(Error::NonfiniteState { t: next.t });
        }
        Ok(next)
    }

    /// Quantized, optionally noisy encoder reading. Same seed, same output.
    pub fn measure(&self, state: &PlantState, seed: u64) -> Measurement {
        let pr = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = (pr.noise_std > 0.0).then(|| Normal::new(0.0, pr.noise_std).expect("std >= 0"));
        let q_meas = state
            .q
            .iter()
            .map(|q| {
                let mut deg = q.to_degrees();
                if let Some(dist) = &noise {
                    deg += dist.sample(&mut rng);
                }
                quantize(deg, pr.encoder_quantum)
            })
            .collect();
        Measurement {
            q_meas,
            p_meas: state.p.clone(),
            t: state.t,
        }
    }
}

/// Rounds `value` to the nearest multiple of `quantum`; `quantum = 0` is a no-op.
pub fn quantize(value: f64, quantum: f64) -> f64 {
    if quantum > 0.0 {
        (value / quantum).round() * quantum
    } else {
        value
    }
}

// Flat layout: [q (n), qd (n), p (2n), h (n)].
fn pack(s: &PlantState) -> Vec<f64> {
    let mut y = Vec::with_capacity(5 * s.q.len());
    y.extend_from_slice(&s.q);
    y.extend_from_slice(&s.qd);
    y.extend_from_slice(&s.p);
    y.extend_from_slice(&s.h_bw);
    y
}

fn unpack(y: &[f64], n: usize, t: f64) -> PlantState {
    PlantState {
        q: y[..n].to_vec(),
        qd: y[n..2 * n].to_vec(),
        p: y[2 * n..4 * n].to_vec(),
        h_bw: y[4 * n..5 * n].to_vec(),
        t,
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }
}

fn rk4_step(pr: &PlantParams, y: &mut [f64], u: &[f64], dt: f64, s: &mut Rk4Scratch) {
    derivative(pr, y, u, &mut s.k1);
    for i in 0..y.len() {
        s.tmp[i] = y[i] + 0.5 * dt * s.k1[i];
    }
    derivative(pr, &s.tmp, u, &mut s.k2);
    for i in 0..y.len() {
        s.tmp[i] = y[i] + 0.5 * dt * s.k2[i];
    }
    derivative(pr, &s.tmp, u, &mut s.k3);
    for i in 0..y.len() {
        s.tmp[i] = y[i] + dt * s.k3[i];
    }
    derivative(pr, &s.tmp, u, &mut s.k4);
    for i in 0..y.len() {
        y[i] += dt / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

fn derivative(pr: &PlantParams, y: &[f64], u: &[f64], dy: &mut [f64]) {
    let n = pr.n_joints;
    let (q, rest) = y.split_at(n);
    let (qd, rest) = rest.split_at(n);
    let (p, h) = rest.split_at(2 * n);
    let bw = &pr.bouc_wen;
    for i in 0..n {
        let mut coupling = 0.0;
        if i > 0 {
            coupling += q[i] - q[i - 1];
        }
        if i + 1 < n {
            coupling += q[i] - q[i + 1];
        }
        let excess = q[i].abs() - pr.angle_limit;
        let softstop = if excess > 0.0 {
            pr.softstop_stiffness * excess * q[i].signum()
        } else {
            0.0
        };
        let torque = pr.torque_gain * (p[2 * i] - p[2 * i + 1])
            - pr.joint_stiffness * q[i]
            - pr.joint_damping * qd[i]
            - pr.coulomb_level * (qd[i] / pr.coulomb_smoothing).tanh()
            - bw.alpha * h[i]
            - pr.coupling_gain * coupling
            - softstop
            - pr.gravity_torque * q[i].sin();
        dy[i] = qd[i];
        dy[n + i] = torque / pr.inertia;
        dy[4 * n + i] = bw.a * qd[i] - bw.beta * qd[i].abs() * h[i] - bw.gamma * qd[i] * h[i].abs();
    }
    for j in 0..2 * n {
        dy[2 * n + j] = (u[j] - p[j]) / pr.pressure_time_constant;
    }
}

/// Staircase differential-pressure sweep used to trace the quasi-static
/// angle-vs-pressure loop of one joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HysteresisSweep {
    /// Peak differential pressure in bar.
    pub amplitude: f64,
    /// Pressure levels per half branch.
    pub levels: usize,
    /// Settling time per level in seconds.
    pub hold: f64,
    /// Mean bellows pressure in bar.
    pub mean_pressure: f64,
    /// Apply the ramp across the bellows pair in the opposite direction.
    pub reversed: bool,
}

impl Default for HysteresisSweep {
    fn default() -> Self {
        Self {
            amplitude: 0.6,
            levels: 30,
            hold: 4.0,
            mean_pressure: 0.35,
            reversed: false,
        }
    }
}

/// Signed area (deg·bar) enclosed by the settled joint angle plotted against the
/// swept differential pressure over one full cycle. Positive when the angle lags
/// the pressure (counter-clockwise loop).
pub fn hysteresis_loop_area(
    params: &PlantParams,
    joint: usize,
    sweep: &HysteresisSweep,
) -> Result<f64> {
    let plant = Plant::new(params.clone())?;
    if joint >= params.n_joints {
        return Err(Error::InvalidParams(format!("joint {joint} out of range")));
    }
    if sweep.levels == 0 || !(sweep.hold > 0.0) {
        return Err(Error::InvalidParams(
            "sweep needs levels > 0 and hold > 0".into(),
        ));
    }
    let hold = (sweep.hold / params.sim_dt).round() * params.sim_dt;
    let sign = if sweep.reversed { -1.0 } else { 1.0 };
    let levels = sweep.levels as i64;
    let step = sweep.amplitude / sweep.levels as f64;

    let mut u = vec![sweep.mean_pressure; params.n_bellows()];
    let mut state = plant.init_state();
    let settle = |state: &PlantState, level: i64, u: &mut Vec<f64>| -> Result<(f64, PlantState)> {
        let r = level as f64 * step;
        u[2 * joint] = sweep.mean_pressure + 0.5 * sign * r;
        u[2 * joint + 1] = sweep.mean_pressure - 0.5 * sign * r;
        let next = plant.step(state, u, hold)?;
        Ok((r, next))
    };

    // Initial loading 0 → +A, not part of the loop.
    for level in 0..=levels {
        state = settle(&state, level, &mut u)?.1;
    }
    let mut points = vec![(sweep.amplitude, state.q[joint].to_degrees())];
    let cycle = (0..2 * levels)
        .map(|i| levels - 1 - i)
        .chain(1 - levels..=levels);
    for level in cycle {
        let (r, next) = settle(&state, level, &mut u)?;
        state = next;
        points.push((r, state.q[joint].to_degrees()));
    }
    Ok(shoelace(&points))
}

fn shoelace(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}
