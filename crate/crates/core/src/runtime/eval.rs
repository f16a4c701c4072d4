//! Open-loop prediction protocols: long self-loop rollouts and short
//! horizons from many probe times.

use std::io::Write;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trajectory::mean;
use crate::data::{Scaler, SeriesLog, StateVariant};
use crate::error::{Error, Result};
use crate::rnn::{rollout, HiddenMode, RnnModel};

/// Mean absolute angle error per horizon step of one model/mode variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonCurve {
    pub name: String,
    pub mode: HiddenMode,
    /// Degrees, averaged over probes and joints; entry `k` is step `k + 1`.
    pub per_step: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Degrees.
    pub per_joint_rmse: Vec<f64>,
    pub mean_rmse: f64,
    /// Standard deviation of each measured angle over the evaluated region.
    pub per_joint_std: Vec<f64>,
    pub horizon: Vec<HorizonCurve>,
}

impl EvalReport {
    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// One row per horizon step, one column per variant.
    pub fn write_horizon_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend(self.horizon.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        let steps = self
            .horizon
            .iter()
            .map(|c| c.per_step.len())
            .max()
            .unwrap_or(0);
        for k in 0..steps {
            let mut row = vec![(k + 1).to_string()];
            row.extend(
                self.horizon
                    .iter()
                    .map(|c| c.per_step.get(k).map_or(String::new(), f64::to_string)),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scaled, clamped network inputs of a log.
pub fn scaled_arrays(log: &SeriesLog, scaler: &Scaler) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut x = log.states(scaler.variant);
    if x.ncols() != scaler.n_state || log.u.ncols() != scaler.n_input() {
        return Err(Error::dim(
            "scaler channels",
            scaler.channels.len(),
            x.ncols() + log.u.ncols(),
        ));
    }
    for ((_, c), v) in x.indexed_iter_mut() {
        *v = scaler.apply_channel(c, *v).clamp(-1.0, 1.0);
    }
    let mut u = log.u.clone();
    for ((_, c), v) in u.indexed_iter_mut() {
        *v = scaler
            .apply_channel(scaler.n_state + c, *v)
            .clamp(-1.0, 1.0);
    }
    Ok((x, u))
}

fn angle_columns(scaler: &Scaler) -> usize {
    match scaler.variant {
        StateVariant::Position => scaler.n_state,
        StateVariant::Full => scaler.n_state / 2,
    }
}

/// Predicted angles in degrees.
fn unscale_angles(pred: ArrayView2<'_, f64>, scaler: &Scaler) -> Array2<f64> {
    let n = angle_columns(scaler);
    Array2::from_shape_fn((pred.nrows(), n), |(k, j)| {
        scaler.invert_channel(j, pred[[k, j]])
    })
}

fn model_scaler(model: &RnnModel) -> Result<&Scaler> {
    model
        .scaler
        .as_ref()
        .ok_or_else(|| Error::InvalidParams("model carries no scaler".into()))
}

/// Self-loop prediction of a whole log after warming up on its first
/// `warmup_s` seconds.
#[derive(Clone, Debug)]
pub struct LongPrediction {
    pub report: EvalReport,
    /// Index of the first predicted row of the log.
    pub start: usize,
    /// Predicted angles in degrees.
    pub predicted: Array2<f64>,
}

pub fn eval_long_prediction(
    model: &RnnModel,
    log: &SeriesLog,
    warmup_s: f64,
) -> Result<LongPrediction> {
    let scaler = model_scaler(model)?;
    let n_w = (warmup_s * log.rate).round() as usize;
    if log.len() < n_w + 2 {
        return Err(Error::LogShorterThanWarmup {
            log_s: log.duration(),
            warmup_s,
        });
    }
    let (x, u) = scaled_arrays(log, scaler)?;
    let horizon = log.len() - n_w - 1;
    let r = rollout(
        model,
        x.view(),
        u.view(),
        n_w,
        horizon,
        HiddenMode::Propagate,
        None,
    )?;
    let predicted = unscale_angles(r.predictions.view(), scaler);
    let start = n_w + 1;
    let measured = log.q.slice(s![start.., ..]);
    let n = predicted.ncols();
    let mut rmse = vec![0.0; n];
    let mut std = vec![0.0; n];
    for j in 0..n {
        let col = measured.column(j);
        let m = col.mean().unwrap_or(0.0);
        std[j] = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        rmse[j] = (col
            .iter()
            .zip(predicted.column(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / col.len() as f64)
            .sqrt();
    }
    Ok(LongPrediction {
        report: EvalReport {
            mean_rmse: mean(&rmse),
            per_joint_rmse: rmse,
            per_joint_std: std,
            horizon: Vec::new(),
        },
        start,
        predicted,
    })
}

/// A model evaluated under a hidden-state mode.
#[derive(Clone, Copy, Debug)]
pub struct Variant<'a> {
    pub name: &'a str,
    pub model: &'a RnnModel,
    pub mode: HiddenMode,
}

/// Seed rows of `probes` evenly spaced probe times that leave `warm` rows
/// before and `horizon` rows after.
pub fn probe_indices(len: usize, warm: usize, horizon: usize, probes: usize) -> Result<Vec<usize>> {
    if probes == 0 || len < warm + horizon + 1 {
        return Err(Error::InsufficientLength {
            needed: warm + horizon + 1,
            got: len,
        });
    }
    let (first, last) = (warm, len - horizon - 1);
    if probes == 1 {
        return Ok(vec![first]);
    }
    Ok((0..probes)
        .map(|i| first + ((last - first) as f64 * i as f64 / (probes - 1) as f64).round() as usize)
        .collect())
}

/// Mean absolute error per horizon step over `probes` evenly spaced probe
/// times. Each probe warms the hidden state on the `warmup_s` seconds before
/// it, then predicts `horizon` steps from the measured state at the probe.
pub fn eval_horizon_ablation(
    variants: &[Variant<'_>],
    log: &SeriesLog,
    warmup_s: f64,
    probes: usize,
    horizon: usize,
) -> Result<Vec<HorizonCurve>> {
    let n_w = (warmup_s * log.rate).round() as usize;
    let seeds = probe_indices(log.len(), n_w, horizon, probes)?;
    variants
        .iter()
        .map(|v| {
            let scaler = model_scaler(v.model)?;
            let (x, u) = scaled_arrays(log, scaler)?;
            let per_probe: Vec<Vec<f64>> = seeds
                .par_iter()
                .map(|&p| -> Result<Vec<f64>> {
                    let rows = p - n_w..p + horizon + 1;
                    let r = rollout(
                        v.model,
                        x.slice(s![rows.clone(), ..]),
                        u.slice(s![rows, ..]),
                        n_w,
                        horizon,
                        v.mode,
                        None,
                    )?;
                    let pred = unscale_angles(r.predictions.view(), scaler);
                    Ok((0..horizon)
                        .map(|k| {
                            let truth = log.q.row(p + 1 + k);
                            mean(
                                &pred
                                    .row(k)
                                    .iter()
                                    .zip(truth)
                                    .map(|(a, b)| (a - b).abs())
                                    .collect::<Vec<_>>(),
                            )
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            let per_step: Vec<f64> = (0..horizon)
                .map(|k| per_probe.iter().map(|e| e[k]).sum::<f64>() / per_probe.len() as f64)
                .collect();
            Ok(HorizonCurve {
                name: v.name.to_string(),
                mode: v.mode,
                mean: mean(&per_step),
                per_step,
            })
        })
        .collect()
}
