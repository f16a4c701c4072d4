//! Grid search of the PI baseline gains on one surrogate joint.
//!
//! Each candidate tracks a seeded ramp-hold reference at the plant rate; the
//! gains with the lowest RMSE among those whose 10° step response overshoots by
//! less than 20% are reported.

use rnnmpc_core::plant::{Plant, PlantParams};
use rnnmpc_core::runtime::{gen_reference, pi_step, PiGains, PiState};

fn simulate(
    plant: &Plant,
    gains: PiGains,
    reference: impl Fn(f64) -> f64,
    secs: f64,
) -> Vec<(f64, f64)> {
    let pr = plant.params();
    let mut state = plant.init_state();
    let mut pi = PiState::new(1);
    let steps = (secs / pr.sim_dt) as usize;
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * pr.sim_dt;
        let r = reference(t);
        let q = plant.measure(&state, k as u64).q_meas;
        let u = pi_step(
            &mut pi,
            &q,
            &[r],
            &[gains],
            0.35,
            (0.0, pr.pressure_range),
            pr.sim_dt,
        );
        state = plant.step(&state, &u, pr.sim_dt).expect("plant step");
        out.push((r, q[0]));
    }
    out
}

fn main() {
    let plant = Plant::new(PlantParams::with_joints(1)).unwrap();
    let reference = gen_reference(1, 120.0, 11).unwrap();
    let mut best: Option<(f64, PiGains, f64)> = None;
    for kp in [0.005, 0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2] {
        for ki in [0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0] {
            let g = PiGains { kp, ki };
            let step = simulate(&plant, g, |_| 10.0, 8.0);
            let overshoot = step.iter().map(|s| s.1).fold(f64::MIN, f64::max) / 10.0 - 1.0;
            let itae: f64 = step
                .iter()
                .enumerate()
                .map(|(k, (r, q))| k as f64 * 1e-3 * (r - q).abs() * 1e-3)
                .sum();
            let track = simulate(&plant, g, |t| reference.at(t)[0], 120.0);
            let rmse = (track.iter().map(|(r, q)| (r - q).powi(2)).sum::<f64>()
                / track.len() as f64)
                .sqrt();
            println!(
                "kp {kp:<6} ki {ki:<5} overshoot {:>6.1}% itae {itae:.3} rmse {rmse:.3}",
                100.0 * overshoot
            );
            if overshoot < 0.2 && best.is_none_or(|b| rmse < b.0) {
                best = Some((rmse, g, overshoot));
            }
        }
    }
    let mut cfg = rnnmpc_core::runtime::Config::default();
    for (kp, ki) in [(0.12, 0.3), (0.08, 0.3), (0.03, 0.12), (0.12, 0.2)] {
        cfg.pi.gains = PiGains { kp, ki };
        let log = rnnmpc_core::runtime::run_control(
            &cfg,
            rnnmpc_core::runtime::ControllerKind::Pi,
            None,
            None,
        )
        .unwrap();
        println!(
            "5-joint kp {kp} ki {ki}: {:.3}",
            rnnmpc_core::runtime::tracking_report(&log)
                .unwrap()
                .mean_rmse
        );
    }
    if let Some((rmse, g, os)) = best {
        println!(
            "best: kp {} ki {} rmse {rmse:.3} overshoot {:.1}%",
            g.kp,
            g.ki,
            100.0 * os
        );
    }
}
