//! Open-loop data collection on the simulated plant.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stream_seed;
use crate::data::{Excitation, SeriesLog};
use crate::error::{Error, Result};
use crate::plant::Plant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectOptions {
    /// Rate of the returned log in Hz; must divide the plant rate.
    pub log_rate: f64,
    /// Low-pass cutoff of the velocity estimate in Hz, applied at the plant rate.
    pub velocity_cutoff: f64,
    /// Commands are sampled at the log rate and held in between, as a
    /// controller running at that rate would apply them.
    pub hold_commands: bool,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            log_rate: 5.0,
            velocity_cutoff: 5.0,
            hold_commands: true,
        }
    }
}

/// Streaming counterpart of [`crate::data::estimate_velocity`].
struct VelocityFilter {
    alpha: f64,
    dt: f64,
    y: Vec<[f64; 3]>,
    seen: usize,
}

impl VelocityFilter {
    fn new(n: usize, rate: f64, cutoff: f64) -> Self {
        let dt = 1.0 / rate;
        let rc = 1.0 / (2.0 * std::f64::consts::PI * cutoff);
        Self {
            alpha: dt / (rc + dt),
            dt,
            y: vec![[0.0; 3]; n],
            seen: 0,
        }
    }

    /// Adds sample `k = seen` and returns the velocity of sample `k − 1`.
    fn push(&mut self, q: &[f64], out: &mut [f64]) -> bool {
        for (j, hist) in self.y.iter_mut().enumerate() {
            let prev = if self.seen == 0 { q[j] } else { hist[2] };
            let y = prev + self.alpha * (q[j] - prev);
            *hist = [hist[1], hist[2], y];
        }
        self.seen += 1;
        match self.seen {
            1 => false,
            2 => {
                for (o, h) in out.iter_mut().zip(&self.y) {
                    *o = (h[2] - h[1]) / self.dt;
                }
                true
            }
            _ => {
                for (o, h) in out.iter_mut().zip(&self.y) {
                    *o = (h[2] - h[0]) / (2.0 * self.dt);
                }
                true
            }
        }
    }

    fn last(&self, out: &mut [f64]) {
        for (o, h) in out.iter_mut().zip(&self.y) {
            *o = (h[2] - h[1]) / self.dt;
        }
    }
}

/// Drives the plant from rest with `excitation` for `duration` seconds and
/// logs measured angles, estimated velocities, pressures and commands.
///
/// Encoder noise for plant step `k` is seeded from `(seed, k)`.
pub fn collect(
    plant: &Plant,
    excitation: &Excitation,
    duration: f64,
    seed: u64,
    opts: &CollectOptions,
) -> Result<SeriesLog> {
    let pr = plant.params();
    let n = pr.n_joints;
    if excitation.n_channels() != 2 * n {
        return Err(Error::dim(
            "excitation channels",
            2 * n,
            excitation.n_channels(),
        ));
    }
    let plant_rate = 1.0 / pr.sim_dt;
    let ratio = plant_rate / opts.log_rate;
    let every = ratio.round();
    if !(opts.log_rate > 0.0) || every < 1.0 || (ratio - every).abs() > 1e-9 * ratio {
        return Err(Error::IncompatibleRates {
            source_hz: plant_rate,
            target_hz: opts.log_rate,
        });
    }
    let every = every as usize;
    let steps = (duration * plant_rate).round() as usize;
    let rows = steps.div_ceil(every);
    if rows < 3 {
        return Err(Error::SeriesTooShort {
            needed: 3,
            got: rows,
        });
    }

    let mut q = Array2::zeros((rows, n));
    let mut qd = Array2::zeros((rows, n));
    let mut p = Array2::zeros((rows, 2 * n));
    let mut u = Array2::zeros((rows, 2 * n));
    let mut filter = VelocityFilter::new(n, plant_rate, opts.velocity_cutoff);
    let mut vel = vec![0.0; n];
    let mut cmd = vec![0.0; 2 * n];
    let mut state = plant.init_state();
    for k in 0..steps {
        let t = k as f64 * pr.sim_dt;
        if !opts.hold_commands || k % every == 0 {
            excitation.value_at(t, &mut cmd);
        }
        let m = plant.measure(&state, stream_seed(seed, k as u64));
        if filter.push(&m.q_meas, &mut vel) && (k - 1) % every == 0 {
            qd.row_mut((k - 1) / every)
                .assign(&ndarray::ArrayView1::from(&vel[..]));
        }
        if k % every == 0 {
            let r = k / every;
            q.row_mut(r)
                .assign(&ndarray::ArrayView1::from(&m.q_meas[..]));
            p.row_mut(r)
                .assign(&ndarray::ArrayView1::from(&m.p_meas[..]));
            u.row_mut(r).assign(&ndarray::ArrayView1::from(&cmd[..]));
        }
        state = plant.step(&state, &cmd, pr.sim_dt)?;
    }
    if (steps - 1).is_multiple_of(every) {
        filter.last(&mut vel);
        qd.row_mut((steps - 1) / every)
            .assign(&ndarray::ArrayView1::from(&vel[..]));
    }
    SeriesLog::new(opts.log_rate, 0.0, q, qd, p, u)
}
