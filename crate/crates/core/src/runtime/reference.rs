//! Ramp-and-hold joint-angle references.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceParams {
    /// Ramp duration range in seconds; the slope follows from the drawn target.
    pub ramp: [f64; 2],
    pub hold: [f64; 2],
    /// Targets are drawn uniformly from `±amplitude` degrees.
    pub amplitude: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            ramp: [2.0, 6.0],
            hold: [1.0, 3.0],
            amplitude: 16.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Segment {
    start: f64,
    ramp_end: f64,
    end: f64,
    from: f64,
    to: f64,
}

/// Per-joint piecewise-linear trajectory in degrees, starting at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub duration: f64,
    joints: Vec<Vec<Segment>>,
}

impl Reference {
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Reference at time `t`; held at its final value beyond the end.
    pub fn value_at(&self, t: f64, out: &mut [f64]) {
        for (o, segs) in out.iter_mut().zip(&self.joints) {
            let i = segs
                .partition_point(|s| s.end <= t)
                .min(segs.len().saturating_sub(1));
            *o = match segs.get(i) {
                None => 0.0,
                Some(s) if t >= s.end => s.to,
                Some(s) if t <= s.start => s.from,
                Some(s) if t < s.ramp_end => {
                    s.from + (s.to - s.from) * (t - s.start) / (s.ramp_end - s.start)
                }
                Some(s) => s.to,
            };
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n_joints()];
        self.value_at(t, &mut v);
        v
    }

    /// `floor(duration · rate)` rows sampled at `k / rate`.
    pub fn sample(&self, rate: f64) -> Array2<f64> {
        let n = (self.duration * rate + 1e-9).floor() as usize;
        let mut out = Array2::zeros((n, self.n_joints()));
        let mut buf = vec![0.0; self.n_joints()];
        for k in 0..n {
            self.value_at(k as f64 / rate, &mut buf);
            out.row_mut(k).assign(&ndarray::ArrayView1::from(&buf[..]));
        }
        out
    }
}

pub fn gen_reference(n_joints: usize, duration: f64, seed: u64) -> Result<Reference> {
    gen_reference_with(n_joints, duration, seed, &ReferenceParams::default())
}

/// Ramps with random duration towards random targets, each followed by a hold
/// of random length. Joints move simultaneously but independently.
pub fn gen_reference_with(
    n_joints: usize,
    duration: f64,
    seed: u64,
    params: &ReferenceParams,
) -> Result<Reference> {
    let ok = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
    if !(duration >= 0.0) || !ok(params.ramp) || !ok(params.hold) || !(params.amplitude >= 0.0) {
        return Err(Error::InvalidParams(
            "reference ranges must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| {
        if lo < hi {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let joints = (0..n_joints)
        .map(|_| {
            let mut segs = Vec::new();
            let (mut t, mut level) = (0.0, 0.0);
            while t < duration {
                let ramp = draw(&mut rng, params.ramp);
                let hold = draw(&mut rng, params.hold);
                let to = if params.amplitude > 0.0 {
                    rng.random_range(-params.amplitude..=params.amplitude)
                } else {
                    0.0
                };
                segs.push(Segment {
                    start: t,
                    ramp_end: t + ramp,
                    end: t + ramp + hold,
                    from: level,
                    to,
                });
                t += ramp + hold;
                level = to;
            }
            segs
        })
        .collect();
    Ok(Reference { duration, joints })
}
