//! Uniformly sampled joint-angle / pressure logs and their conditioning.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which measured quantities form the network state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateVariant {
    /// Joint angles only.
    #[default]
    Position,
    /// Joint angles followed by joint velocities.
    Full,
}

impl StateVariant {
    pub fn state_dim(self, n_joints: usize) -> usize {
        match self {
            StateVariant::Position => n_joints,
            StateVariant::Full => 2 * n_joints,
        }
    }
}

/// Time-stamped record of joint angles (deg), velocities (deg/s), measured and
/// desired bellows pressures (bar) at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesLog {
    pub rate: f64,
    pub t: Vec<f64>,
    pub q: Array2<f64>,
    pub qd: Array2<f64>,
    pub p: Array2<f64>,
    pub u: Array2<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinarySidecar {
    format: String,
    n_joints: usize,
    rate: f64,
    rows: usize,
    columns: Vec<String>,
}

const BINARY_FORMAT: &str = "rnnmpc-series-v1";

impl SeriesLog {
    pub fn new(
        rate: f64,
        t0: f64,
        q: Array2<f64>,
        qd: Array2<f64>,
        p: Array2<f64>,
        u: Array2<f64>,
    ) -> Result<Self> {
        let n = q.nrows();
        let t = (0..n).map(|k| t0 + k as f64 / rate).collect();
        let log = Self {
            rate,
            t,
            q,
            qd,
            p,
            u,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let j = self.n_joints();
        if !(self.rate > 0.0) {
            return Err(Error::InvalidParams("rate must be positive".into()));
        }
        for (what, arr, cols) in [
            ("qd", &self.qd, j),
            ("p", &self.p, 2 * j),
            ("u", &self.u, 2 * j),
        ] {
            if arr.nrows() != n {
                return Err(Error::dim(what, n, arr.nrows()));
            }
            if arr.ncols() != cols {
                return Err(Error::dim(what, cols, arr.ncols()));
            }
        }
        if self.t.len() != n {
            return Err(Error::dim("t", n, self.t.len()));
        }
        let dt = 1.0 / self.rate;
        for w in self.t.windows(2) {
            if !((w[1] - w[0] - dt).abs() <= 1e-6 * dt) {
                return Err(Error::Format(
                    "timestamps are not uniformly spaced at 1/rate".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_joints(&self) -> usize {
        self.q.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.rate
    }

    /// State matrix for the chosen variant (angles, optionally velocities).
    pub fn states(&self, variant: StateVariant) -> Array2<f64> {
        match variant {
            StateVariant::Position => self.q.clone(),
            StateVariant::Full => ndarray::concatenate![Axis(1), self.q, self.qd],
        }
    }

    /// Rows `range` as a new log.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SeriesLog {
        SeriesLog {
            rate: self.rate,
            t: self.t[range.clone()].to_vec(),
            q: self.q.slice(s![range.clone(), ..]).to_owned(),
            qd: self.qd.slice(s![range.clone(), ..]).to_owned(),
            p: self.p.slice(s![range.clone(), ..]).to_owned(),
            u: self.u.slice(s![range, ..]).to_owned(),
        }
    }

    /// Replaces the velocity columns with filtered finite differences of the angles.
    pub fn with_estimated_velocity(mut self, cutoff: f64) -> Result<Self> {
        for j in 0..self.n_joints() {
            let col: Vec<f64> = self.q.column(j).to_vec();
            let v = estimate_velocity(&col, self.rate, cutoff)?;
            self.qd.column_mut(j).assign(&ndarray::Array1::from(v));
        }
        Ok(self)
    }

    pub fn column_names(n_joints: usize) -> Vec<String> {
        let mut names = vec!["t".to_string()];
        names.extend((1..=n_joints).map(|i| format!("q{i}")));
        names.extend((1..=n_joints).map(|i| format!("qd{i}")));
        for i in 1..=n_joints {
            names.push(format!("p{i}1"));
            names.push(format!("p{i}2"));
        }
        for i in 1..=n_joints {
            names.push(format!("pdes{i}1"));
            names.push(format!("pdes{i}2"));
        }
        names
    }

    fn row_values(&self, k: usize, out: &mut Vec<f64>) {
        out.clear();
        out.push(self.t[k]);
        out.extend(self.q.row(k).iter());
        out.extend(self.qd.row(k).iter());
        out.extend(self.p.row(k).iter());
        out.extend(self.u.row(k).iter());
    }

    fn from_rows(rate: f64, n_joints: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let j = n_joints;
        let mut log = SeriesLog {
            rate,
            t: Vec::with_capacity(n),
            q: Array2::zeros((n, j)),
            qd: Array2::zeros((n, j)),
            p: Array2::zeros((n, 2 * j)),
            u: Array2::zeros((n, 2 * j)),
        };
        for (k, row) in rows.iter().enumerate() {
            if row.len() != 1 + 6 * j {
                return Err(Error::dim("log row", 1 + 6 * j, row.len()));
            }
            log.t.push(row[0]);
            for c in 0..j {
                log.q[[k, c]] = row[1 + c];
                log.qd[[k, c]] = row[1 + j + c];
            }
            for c in 0..2 * j {
                log.p[[k, c]] = row[1 + 2 * j + c];
                log.u[[k, c]] = row[1 + 4 * j + c];
            }
        }
        log.validate()?;
        Ok(log)
    }

    /// Writes the log as CSV. The rate is recovered from the timestamps on read.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(Self::column_names(self.n_joints()))?;
        let mut row = Vec::new();
        for k in 0..self.len() {
            self.row_values(k, &mut row);
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let header = r.headers()?.clone();
        let width = header.len();
        if width < 7 || (width - 1) % 6 != 0 {
            return Err(Error::Format(format!("unexpected column count {width}")));
        }
        let n_joints = (width - 1) / 6;
        let expected = Self::column_names(n_joints);
        if header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
            return Err(Error::Format("unexpected CSV header".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.len() < 2 {
            return Err(Error::SeriesTooShort {
                needed: 2,
                got: rows.len(),
            });
        }
        let rate = 1.0 / (rows[1][0] - rows[0][0]);
        // Snap to the nearest integer rate when the timestamps came from one.
        let rate = if (rate - rate.round()).abs() < 1e-6 * rate {
            rate.round()
        } else {
            rate
        };
        Self::from_rows(rate, n_joints, &rows)
    }

    /// Compact binary form: row-major little-endian f64 in CSV column order,
    /// with a JSON sidecar `<path>.json` carrying rate and column names.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut row = Vec::new();
        for k in 0..self.len() {
            self.row_values(k, &mut row);
            for v in &row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        let sidecar = BinarySidecar {
            format: BINARY_FORMAT.into(),
            n_joints: self.n_joints(),
            rate: self.rate,
            rows: self.len(),
            columns: Self::column_names(self.n_joints()),
        };
        serde_json::to_writer_pretty(File::create(sidecar_path(path))?, &sidecar)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let sidecar: BinarySidecar =
            serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
        if sidecar.format != BINARY_FORMAT {
            return Err(Error::Format(format!(
                "unknown format {:?}",
                sidecar.format
            )));
        }
        let width = 1 + 6 * sidecar.n_joints;
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() != sidecar.rows * width * 8 {
            return Err(Error::Format("binary size does not match sidecar".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let rows: Vec<Vec<f64>> = values.chunks_exact(width).map(|c| c.to_vec()).collect();
        Self::from_rows(sidecar.rate, sidecar.n_joints, &rows)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Low-pass filters `q` (first order, `cutoff` Hz) and differentiates it with
/// central differences, one-sided at the ends.
pub fn estimate_velocity(q: &[f64], rate: f64, cutoff: f64) -> Result<Vec<f64>> {
    if q.len() < 3 {
        return Err(Error::SeriesTooShort {
            needed: 3,
            got: q.len(),
        });
    }
    let dt = 1.0 / rate;
    let rc = 1.0 / (2.0 * std::f64::consts::PI * cutoff);
    let alpha = dt / (rc + dt);
    let mut y = Vec::with_capacity(q.len());
    let mut prev = q[0];
    for &x in q {
        prev += alpha * (x - prev);
        y.push(prev);
    }
    let n = y.len();
    let mut v = vec![0.0; n];
    v[0] = (y[1] - y[0]) / dt;
    v[n - 1] = (y[n - 1] - y[n - 2]) / dt;
    for k in 1..n - 1 {
        v[k] = (y[k + 1] - y[k - 1]) / (2.0 * dt);
    }
    Ok(v)
}

/// Keeps every `(rate / target)`-th sample, starting with the first.
pub fn downsample(log: &SeriesLog, target: f64) -> Result<SeriesLog> {
    let ratio = log.rate / target;
    let step = ratio.round();
    if !(target > 0.0) || step < 1.0 || (ratio - step).abs() > 1e-9 * ratio {
        return Err(Error::IncompatibleRates {
            source_hz: log.rate,
            target_hz: target,
        });
    }
    let step = step as usize;
    let keep = s![..;step, ..];
    Ok(SeriesLog {
        rate: target,
        t: log.t.iter().step_by(step).copied().collect(),
        q: log.q.slice(keep).to_owned(),
        qd: log.qd.slice(keep).to_owned(),
        p: log.p.slice(keep).to_owned(),
        u: log.u.slice(keep).to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_log(n: usize, rate: f64) -> SeriesLog {
        let q = Array2::from_shape_fn((n, 2), |(k, j)| (j as f64 + 1.0) * k as f64 / rate);
        let qd = Array2::zeros((n, 2));
        let p = Array2::from_shape_fn((n, 4), |(k, c)| (k + c) as f64 * 1e-3);
        let u = Array2::from_shape_fn((n, 4), |(k, c)| (k * c) as f64 * 1e-4);
        SeriesLog::new(rate, 0.0, q, qd, p, u).unwrap()
    }

    #[test]
    fn velocity_of_constant_is_zero() {
        let v = estimate_velocity(&[3.0; 50], 1000.0, 5.0).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        assert!(matches!(
            estimate_velocity(&[1.0, 2.0], 1000.0, 5.0),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn velocity_of_ramp_after_settling() {
        // q = c·t through a first-order filter settles to slope c with a fixed lag.
        let rate = 1000.0;
        let c = 12.5;
        let q: Vec<f64> = (0..5000).map(|k| c * k as f64 / rate).collect();
        let v = estimate_velocity(&q, rate, 50.0).unwrap();
        for x in &v[1000..4999] {
            assert!((x - c).abs() < 0.01 * c, "{x}");
        }
    }

    #[test]
    fn downsample_keeps_every_nth() {
        let log = ramp_log(1000, 1000.0);
        let d = downsample(&log, 5.0).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.rate, 5.0);
        for (i, k) in (0..1000).step_by(200).enumerate() {
            assert_eq!(d.t[i], log.t[k]);
            assert_eq!(d.q.row(i), log.q.row(k));
            assert_eq!(d.u.row(i), log.u.row(k));
        }
        assert_eq!(downsample(&log, 1000.0).unwrap(), log);
        assert!(matches!(
            downsample(&log, 3.0),
            Err(Error::IncompatibleRates { .. })
        ));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = ramp_log(40, 5.0);
        let csv_path = dir.path().join("log.csv");
        log.write_csv(&csv_path).unwrap();
        assert_eq!(SeriesLog::read_csv(&csv_path).unwrap(), log);
        let bin_path = dir.path().join("log.bin");
        log.write_binary(&bin_path).unwrap();
        assert_eq!(SeriesLog::read_binary(&bin_path).unwrap(), log);
        let header = std::fs::read_to_string(&csv_path).unwrap();
        assert!(header.starts_with("t,q1,q2,qd1,qd2,p11,p12,p21,p22,pdes11,pdes12,pdes21,pdes22\n"));
    }

    #[test]
    fn full_variant_stacks_velocity() {
        let log = ramp_log(10, 5.0);
        assert_eq!(log.states(StateVariant::Position).ncols(), 2);
        let full = log.states(StateVariant::Full);
        assert_eq!(full.ncols(), 4);
        assert_eq!(full[[3, 2]], log.qd[[3, 0]]);
    }
}
