//! Random bellows-pressure excitation signals.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise pressure trajectory: each segment ramps linearly from the previous
/// level to a new random level over `ramp` seconds, then holds it for `hold`
/// seconds. `ramp = 0` gives pure steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub ramp: f64,
    pub hold: f64,
    /// Level before the first segment, one entry per bellows.
    pub start: Vec<f64>,
    /// Target level of each segment.
    pub levels: Vec<Vec<f64>>,
}

impl Excitation {
    pub fn n_channels(&self) -> usize {
        self.start.len()
    }

    pub fn segment_duration(&self) -> f64 {
        self.ramp + self.hold
    }

    pub fn duration(&self) -> f64 {
        self.levels.len() as f64 * self.segment_duration()
    }

    /// Command at time `t`; holds the last level beyond the end.
    pub fn value_at(&self, t: f64, out: &mut [f64]) {
        let seg_len = self.segment_duration();
        if self.levels.is_empty() {
            out.copy_from_slice(&self.start);
            return;
        }
        let seg = ((t.max(0.0) / seg_len).floor() as usize).min(self.levels.len() - 1);
        let local = t - seg as f64 * seg_len;
        let to = &self.levels[seg];
        if self.ramp > 0.0 && local < self.ramp {
            let from = if seg == 0 {
                &self.start
            } else {
                &self.levels[seg - 1]
            };
            let w = (local / self.ramp).clamp(0.0, 1.0);
            for ((o, a), b) in out.iter_mut().zip(from).zip(to) {
                *o = a + w * (b - a);
            }
        } else {
            out.copy_from_slice(to);
        }
    }

    /// Samples the trajectory at `rate` Hz over its full duration.
    pub fn sample(&self, rate: f64) -> Array2<f64> {
        let n = (self.duration() * rate).round() as usize;
        let mut out = Array2::zeros((n, self.n_channels()));
        let mut buf = vec![0.0; self.n_channels()];
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            self.value_at(k as f64 / rate, &mut buf);
            row.assign(&ndarray::ArrayView1::from(&buf[..]));
        }
        out
    }
}

fn segment_count(duration: f64, segment: f64) -> Result<usize> {
    if !(segment > 0.0) || !(duration >= 0.0) {
        return Err(Error::InvalidParams(
            "segment length must be positive".into(),
        ));
    }
    let count = (duration / segment).round();
    if (count * segment - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::InvalidParams(format!(
            "duration {duration} s is not a multiple of the {segment} s segment"
        )));
    }
    Ok(count as usize)
}

fn random_levels(n_channels: usize, count: usize, p_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..n_channels)
                .map(|_| {
                    if p_max > 0.0 {
                        rng.random_range(0.0..=p_max)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Random pressure steps, each held for `hold` seconds, uniform in `[0, p_max]`.
pub fn gen_step_excitation(
    n_joints: usize,
    hold: f64,
    duration: f64,
    p_max: f64,
    seed: u64,
) -> Result<Excitation> {
    let count = segment_count(duration, hold)?;
    Ok(Excitation {
        ramp: 0.0,
        hold,
        start: vec![0.0; 2 * n_joints],
        levels: random_levels(2 * n_joints, count, p_max, seed),
    })
}

/// Random pressure levels joined by linear transitions of `ramp` seconds and
/// held for `hold` seconds.
pub fn gen_ramp_excitation(
    n_joints: usize,
    ramp: f64,
    hold: f64,
    duration: f64,
    p_max: f64,
    seed: u64,
) -> Result<Excitation> {
    if !(ramp > 0.0 && hold > 0.0) {
        return Err(Error::InvalidParams(
            "ramp and hold must be positive".into(),
        ));
    }
    let count = segment_count(duration, ramp + hold)?;
    Ok(Excitation {
        ramp,
        hold,
        start: vec![0.0; 2 * n_joints],
        levels: random_levels(2 * n_joints, count, p_max, seed),
    })
}
