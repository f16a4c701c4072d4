//! Warm-up + prediction windows over scaled series.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scaler::Scaler;
use super::series::SeriesLog;
use crate::error::{Error, Result};

/// States `x` and inputs `u` of one log, scaled to `[-1, 1]`, sample-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledSeries {
    pub id: String,
    pub x: Array2<f64>,
    pub u: Array2<f64>,
}

impl ScaledSeries {
    pub fn new(id: impl Into<String>, x: Array2<f64>, u: Array2<f64>) -> Result<Self> {
        if x.nrows() != u.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} state rows vs {} input rows",
                x.nrows(),
                u.nrows()
            )));
        }
        Ok(Self {
            id: id.into(),
            x: x.as_standard_layout().into_owned(),
            u: u.as_standard_layout().into_owned(),
        })
    }

    /// Scales `log` with `scaler` (whose variant selects the state columns).
    pub fn from_log(id: impl Into<String>, log: &SeriesLog, scaler: &Scaler) -> Result<Self> {
        let x = log.states(scaler.variant);
        if x.ncols() != scaler.n_state || log.u.ncols() != scaler.n_input() {
            return Err(Error::dim(
                "scaler channels",
                scaler.channels.len(),
                x.ncols() + log.u.ncols(),
            ));
        }
        let mut xs = x;
        for ((_, c), v) in xs.indexed_iter_mut() {
            *v = scaler.apply_channel(c, *v);
        }
        let mut us = log.u.clone();
        for ((_, c), v) in us.indexed_iter_mut() {
            *v = scaler.apply_channel(scaler.n_state + c, *v);
        }
        Self::new(id, xs, us)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn slice(&self, range: Range<usize>) -> ScaledSeries {
        ScaledSeries {
            id: format!("{}[{}..{}]", self.id, range.start, range.end),
            x: self.x.slice(s![range.clone(), ..]).to_owned(),
            u: self.u.slice(s![range, ..]).to_owned(),
        }
    }
}

/// Borrowed view of one training window.
///
/// `x` has `n_w + n_p + 2` rows: rows `0..=n_w` feed the warm-up and seed the
/// self-loop, rows `n_w+1..` are the targets. `u` has `n_w + n_p + 1` rows.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub x: ArrayView2<'a, f64>,
    pub u: ArrayView2<'a, f64>,
}

impl Window<'_> {
    pub fn targets(&self, n_w: usize) -> ArrayView2<'_, f64> {
        self.x.slice_move(s![n_w + 1.., ..])
    }
}

/// Overlapping windows over one scaled series.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    source: Arc<ScaledSeries>,
    offsets: Vec<usize>,
    pub n_w: usize,
    pub n_p: usize,
}

impl WindowedDataset {
    pub fn source(&self) -> &Arc<ScaledSeries> {
        &self.source
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Samples spanned by one window including its last target.
    pub fn span(&self) -> usize {
        self.n_w + self.n_p + 2
    }

    pub fn window(&self, i: usize) -> Window<'_> {
        let o = self.offsets[i];
        Window {
            x: self.source.x.slice(s![o..o + self.span(), ..]),
            u: self.source.u.slice(s![o..o + self.span() - 1, ..]),
        }
    }

    pub fn sample_range(&self, i: usize) -> Range<usize> {
        let o = self.offsets[i];
        o..o + self.span()
    }

    pub fn with_offsets(&self, offsets: Vec<usize>) -> Self {
        Self {
            source: Arc::clone(&self.source),
            offsets,
            n_w: self.n_w,
            n_p: self.n_p,
        }
    }

    /// Maximal runs of consecutive samples covered by the windows.
    pub fn contiguous_runs(&self) -> Vec<Range<usize>> {
        let mut ranges: Vec<Range<usize>> = (0..self.len()).map(|i| self.sample_range(i)).collect();
        ranges.sort_by_key(|r| r.start);
        let mut runs: Vec<Range<usize>> = Vec::new();
        for r in ranges {
            match runs.last_mut() {
                Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
                _ => runs.push(r),
            }
        }
        runs
    }
}

/// Cuts `series` into windows of `n_w` warm-up steps and `n_p + 1` self-loop
/// predictions, starting every `stride` samples.
pub fn make_sequences(
    series: Arc<ScaledSeries>,
    n_w: usize,
    n_p: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    if stride == 0 {
        return Err(Error::InvalidParams("stride must be positive".into()));
    }
    let span = n_w + n_p + 2;
    let n_s = series.len();
    if n_s < span {
        return Err(Error::InsufficientData(format!(
            "{n_s} samples cannot hold a window of {span} (n_w = {n_w}, n_p = {n_p})"
        )));
    }
    let offsets = (0..=n_s - span).step_by(stride).collect();
    Ok(WindowedDataset {
        source: series,
        offsets,
        n_w,
        n_p,
    })
}

/// Block split by time: a contiguous block of windows (position drawn from
/// `seed`) becomes validation, the rest training. Validation windows sharing a
/// sample with any training window are dropped.
///
/// The nominal training count is `round(train_fraction · n)` clamped so both
/// sides keep at least one window.
pub fn split(
    ds: &WindowedDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParams(
            "train_fraction must lie in (0, 1)".into(),
        ));
    }
    let n = ds.len();
    if n < 2 {
        return Ok((ds.clone(), ds.with_offsets(Vec::new())));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let n_val = n - n_train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let val_start = rng.random_range(0..=n_train);
    let val_idx = val_start..val_start + n_val;

    let train: Vec<usize> = (0..n).filter(|i| !val_idx.contains(i)).collect();
    let train_ranges: Vec<Range<usize>> = train.iter().map(|&i| ds.sample_range(i)).collect();
    let overlaps = |r: &Range<usize>| {
        train_ranges
            .iter()
            .any(|t| t.start < r.end && r.start < t.end)
    };
    let val: Vec<usize> = val_idx
        .filter(|&i| !overlaps(&ds.sample_range(i)))
        .collect();

    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.offsets[i]).collect::<Vec<_>>();
    Ok((ds.with_offsets(pick(&train)), ds.with_offsets(pick(&val))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(n: usize) -> Arc<ScaledSeries> {
        let x = Array2::from_shape_fn((n, 2), |(k, c)| (k * 2 + c) as f64);
        let u = Array2::from_shape_fn((n, 3), |(k, c)| -((k * 3 + c) as f64));
        Arc::new(ScaledSeries::new("s", x, u).unwrap())
    }

    #[test]
    fn enumerates_complete_windows() {
        // Offsets 0..=3 each need samples o..o+7 of a 10-sample series.
        let ds = make_sequences(series(10), 3, 2, 1).unwrap();
        assert_eq!(ds.len(), 4);
        let w = ds.window(3);
        assert_eq!(w.u.nrows(), 6);
        assert_eq!(w.x.nrows(), 7);
        assert_eq!(w.targets(3).nrows(), 3);
        assert_eq!(w.x[[0, 0]], 6.0);
        assert_eq!(w.targets(3)[[0, 0]], 2.0 * 7.0);
    }

    #[test]
    fn stride_of_span_partitions() {
        let ds = make_sequences(series(70), 3, 2, 7).unwrap();
        assert_eq!(ds.offsets(), &[0, 7, 14, 21, 28, 35, 42, 49, 56, 63]);
        for i in 1..ds.len() {
            assert!(ds.sample_range(i - 1).end <= ds.sample_range(i).start);
        }
    }

    #[test]
    fn too_short_series() {
        assert!(matches!(
            make_sequences(series(5), 3, 2, 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            make_sequences(series(6), 3, 2, 1),
            Err(Error::InsufficientData(_))
        ));
        assert_eq!(make_sequences(series(7), 3, 2, 1).unwrap().len(), 1);
    }

    #[test]
    fn seventy_thirty_without_overlap() {
        let ds = make_sequences(series(700), 3, 2, 7).unwrap();
        assert_eq!(ds.len(), 100);
        let (tr, va) = split(&ds, 0.7, 5).unwrap();
        assert_eq!((tr.len(), va.len()), (70, 30));
    }

    #[test]
    fn rounding_rule_keeps_both_sides() {
        let ds = make_sequences(series(14), 3, 2, 7).unwrap();
        assert_eq!(ds.len(), 2);
        let (tr, va) = split(&ds, 0.999, 0).unwrap();
        assert_eq!((tr.len(), va.len()), (1, 1));
    }

    #[test]
    fn split_is_seeded() {
        let ds = make_sequences(series(500), 10, 5, 5).unwrap();
        let (a, b) = split(&ds, 0.7, 11).unwrap();
        let (c, d) = split(&ds, 0.7, 11).unwrap();
        assert_eq!(a.offsets(), c.offsets());
        assert_eq!(b.offsets(), d.offsets());
    }

    proptest! {
        #[test]
        fn stride_one_count(n_w in 0usize..20, n_p in 0usize..10, extra in 0usize..50) {
            let n_s = n_w + n_p + 2 + extra;
            let ds = make_sequences(series(n_s), n_w, n_p, 1).unwrap();
            prop_assert_eq!(ds.len(), n_s - (n_w + n_p + 1));
        }

        #[test]
        fn no_leakage(n in 30usize..300, stride in 1usize..12, frac in 0.1f64..0.9, seed in 0u64..1000) {
            let ds = make_sequences(series(n), 6, 3, stride).unwrap();
            let (tr, va) = split(&ds, frac, seed).unwrap();
            let mut used = vec![false; n];
            for i in 0..tr.len() {
                for k in tr.sample_range(i) { used[k] = true; }
            }
            for i in 0..va.len() {
                for k in va.sample_range(i) { prop_assert!(!used[k]); }
            }
        }
    }
}
