use std::path::Path;

use serde::{Deserialize, Serialize};

use super::series::{SeriesLog, StateVariant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Per-channel affine map of physical values onto `[-1, 1]`.
///
/// Channels are ordered states first (angles, then velocities for the full
/// variant), followed by the desired bellows pressures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub variant: StateVariant,
    pub n_state: usize,
    pub channels: Vec<Channel>,
}

impl Scaler {
    pub fn new(variant: StateVariant, n_state: usize, channels: Vec<Channel>) -> Result<Self> {
        let s = Self {
            variant,
            n_state,
            channels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_state > self.channels.len() {
            return Err(Error::dim(
                "scaler state channels",
                self.channels.len(),
                self.n_state,
            ));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if !(c.max > c.min) || !c.min.is_finite() || !c.max.is_finite() {
                return Err(Error::DegenerateChannel {
                    channel: i,
                    name: c.name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn n_input(&self) -> usize {
        self.channels.len() - self.n_state
    }

    pub fn apply_channel(&self, i: usize, v: f64) -> f64 {
        let c = &self.channels[i];
        2.0 * (v - c.min) / (c.max - c.min) - 1.0
    }

    pub fn invert_channel(&self, i: usize, s: f64) -> f64 {
        let c = &self.channels[i];
        c.min + (s + 1.0) * 0.5 * (c.max - c.min)
    }

    /// Scales a full channel vector (states followed by inputs).
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, x)| self.apply_channel(i, *x))
            .collect()
    }

    pub fn invert(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(i, x)| self.invert_channel(i, *x))
            .collect()
    }

    pub fn scale_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| self.apply_channel(i, *v))
            .collect()
    }

    pub fn unscale_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| self.invert_channel(i, *v))
            .collect()
    }

    pub fn scale_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.apply_channel(self.n_state + i, *v))
            .collect()
    }

    pub fn unscale_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.invert_channel(self.n_state + i, *v))
            .collect()
    }

    /// Extends channel `i` so it covers `[lo, hi]` in addition to the fitted range.
    pub fn widen(&mut self, i: usize, lo: f64, hi: f64) {
        let c = &mut self.channels[i];
        c.min = c.min.min(lo);
        c.max = c.max.max(hi);
    }

    /// Replaces the range of channel `i`.
    pub fn pin(&mut self, i: usize, lo: f64, hi: f64) -> Result<()> {
        if !(hi > lo) {
            return Err(Error::DegenerateChannel {
                channel: i,
                name: self.channels[i].name.clone(),
            });
        }
        self.channels[i].min = lo;
        self.channels[i].max = hi;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s: Scaler =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        s.validate()?;
        Ok(s)
    }
}

pub fn channel_names(variant: StateVariant, n_joints: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=n_joints).map(|i| format!("q{i}")).collect();
    if variant == StateVariant::Full {
        names.extend((1..=n_joints).map(|i| format!("qd{i}")));
    }
    for i in 1..=n_joints {
        names.push(format!("pdes{i}1"));
        names.push(format!("pdes{i}2"));
    }
    names
}

/// Per-channel extrema over every sample of every log.
pub fn fit_scaler(logs: &[&SeriesLog], variant: StateVariant) -> Result<Scaler> {
    let first = logs
        .first()
        .ok_or_else(|| Error::InsufficientData("no logs to fit a scaler on".into()))?;
    let n_joints = first.n_joints();
    let names = channel_names(variant, n_joints);
    let mut lo = vec![f64::INFINITY; names.len()];
    let mut hi = vec![f64::NEG_INFINITY; names.len()];
    let n_state = variant.state_dim(n_joints);
    for log in logs {
        if log.n_joints() != n_joints {
            return Err(Error::dim("log joints", n_joints, log.n_joints()));
        }
        let x = log.states(variant);
        for (col, (l, h)) in x
            .columns()
            .into_iter()
            .zip(lo.iter_mut().zip(hi.iter_mut()))
        {
            for v in col {
                *l = l.min(*v);
                *h = h.max(*v);
            }
        }
        for (c, col) in log.u.columns().into_iter().enumerate() {
            for v in col {
                lo[n_state + c] = lo[n_state + c].min(*v);
                hi[n_state + c] = hi[n_state + c].max(*v);
            }
        }
    }
    let channels = names
        .into_iter()
        .zip(lo.into_iter().zip(hi))
        .map(|(name, (min, max))| Channel { name, min, max })
        .collect();
    Scaler::new(variant, n_state, channels)
}
