//! Closed-loop run records and tracking error.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Gentle excitation while the controller only observes.
    Warmup,
    Control,
}

/// One control period: values at its start and the input applied over it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub t: f64,
    pub phase: Phase,
    /// Degrees.
    pub reference: Vec<f64>,
    /// Measured angles in degrees.
    pub q: Vec<f64>,
    /// Applied bellows pressures in bar.
    pub u: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub pg_norm: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub controller: String,
    pub checkpoint: Option<String>,
    pub config_hash: Option<String>,
    /// Full configuration in TOML form.
    #[serde(default)]
    pub config: Option<String>,
    pub seed: u64,
    pub reference_seed: u64,
    pub control_rate: f64,
    pub warmup_s: f64,
    pub duration_s: f64,
    pub n_joints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub meta: RunMetadata,
    pub records: Vec<CycleRecord>,
    /// Solver wall time per control cycle in seconds; not reproducible.
    #[serde(default)]
    pub solve_times: Vec<f64>,
}

impl TrajectoryLog {
    /// Time span of the control phase, `[first, last + period)`.
    pub fn control_interval(&self) -> (f64, f64) {
        let first = self.records.iter().find(|r| r.phase == Phase::Control);
        match (first, self.records.last()) {
            (Some(a), Some(b)) => (a.t, b.t + 1.0 / self.meta.control_rate),
            _ => (0.0, 0.0),
        }
    }

    pub fn csv_header(n_joints: usize) -> Vec<String> {
        let mut h = vec!["t".to_string(), "phase".to_string()];
        h.extend((1..=n_joints).map(|j| format!("ref{j}")));
        h.extend((1..=n_joints).map(|j| format!("q{j}")));
        for j in 1..=n_joints {
            h.push(format!("u{j}1"));
            h.push(format!("u{j}2"));
        }
        h.extend(["cost", "iterations", "pg_norm", "fallback"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(self.meta.n_joints))?;
        for r in &self.records {
            let mut row = vec![
                r.t.to_string(),
                match r.phase {
                    Phase::Warmup => "warmup".into(),
                    Phase::Control => "control".into(),
                },
            ];
            row.extend(
                r.reference
                    .iter()
                    .chain(&r.q)
                    .chain(&r.u)
                    .map(f64::to_string),
            );
            row.push(r.cost.to_string());
            row.push(r.iterations.to_string());
            row.push(r.pg_norm.to_string());
            row.push(u8::from(r.fallback).to_string());
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `<stem>.csv` with the records and `<stem>.json` with the full log.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let json = serde_json::to_string(self)?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Records compared field by field at the bit level, ignoring wall time.
    pub fn same_run(&self, other: &TrajectoryLog) -> bool {
        fn bits(v: &[f64]) -> Vec<u64> {
            v.iter().map(|x| x.to_bits()).collect()
        }
        self.meta == other.meta
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.t.to_bits() == b.t.to_bits()
                    && a.phase == b.phase
                    && bits(&a.reference) == bits(&b.reference)
                    && bits(&a.q) == bits(&b.q)
                    && bits(&a.u) == bits(&b.u)
                    && a.cost.to_bits() == b.cost.to_bits()
                    && a.iterations == b.iterations
                    && a.pg_norm.to_bits() == b.pg_norm.to_bits()
                    && a.fallback == b.fallback
            })
    }
}

/// Per-joint root-mean-square of `reference − q` in degrees over records with
/// `start ≤ t < end`.
pub fn compute_rmse(log: &TrajectoryLog, interval: (f64, f64)) -> Result<Vec<f64>> {
    let (start, end) = interval;
    let rows: Vec<&CycleRecord> = log
        .records
        .iter()
        .filter(|r| r.t >= start && r.t < end)
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let n = log.meta.n_joints;
    let mut acc = vec![0.0; n];
    for r in &rows {
        for j in 0..n {
            acc[j] += (r.reference[j] - r.q[j]).powi(2);
        }
    }
    Ok(acc
        .into_iter()
        .map(|s| (s / rows.len() as f64).sqrt())
        .collect())
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
