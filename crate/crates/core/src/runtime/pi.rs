//! Decentralized joint-space PI baseline.

use serde::{Deserialize, Serialize};

/// Gains of one joint: `kp` in bar/°, `ki` in bar/(°·s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl Default for PiGains {
    /// Lowest ramp-hold tracking error with under 20 % step overshoot in the
    /// gain grid of `examples/pi_tuning.rs`.
    fn default() -> Self {
        Self { kp: 0.12, ki: 0.3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PiState {
    pub integral: Vec<f64>,
}

impl PiState {
    pub fn new(n_joints: usize) -> Self {
        Self {
            integral: vec![0.0; n_joints],
        }
    }
}

/// Bellows commands `(u_mean + d/2, u_mean − d/2)` per joint with
/// `d = kp·e + ki·∫e`, clipped to `limits`.
///
/// The integrator only moves while the command is unsaturated or when the
/// error drives it back out of saturation.
pub fn pi_step(
    state: &mut PiState,
    q_meas: &[f64],
    reference: &[f64],
    gains: &[PiGains],
    u_mean: f64,
    limits: (f64, f64),
    dt: f64,
) -> Vec<f64> {
    let half = (u_mean - limits.0).min(limits.1 - u_mean).max(0.0);
    let mut out = Vec::with_capacity(2 * q_meas.len());
    for (j, (q, r)) in q_meas.iter().zip(reference).enumerate() {
        let g = gains[j.min(gains.len() - 1)];
        let e = r - q;
        let i = &mut state.integral[j];
        let trial = g.kp * e + g.ki * (*i + e * dt);
        let saturated = trial.abs() > 2.0 * half;
        if !saturated || trial.signum() != e.signum() {
            *i += e * dt;
        }
        let d = (g.kp * e + g.ki * *i).clamp(-2.0 * half, 2.0 * half);
        out.push((u_mean + 0.5 * d).clamp(limits.0, limits.1));
        out.push((u_mean - 0.5 * d).clamp(limits.0, limits.1));
    }
    out
}
