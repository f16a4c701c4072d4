//! Warm-up + self-loop training and the conventional stateful baseline.

use std::ops::Range;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{HiddenState, RnnArch, RnnModel};
use super::net::{backward, gradients_with, unroll, window_sse, HiddenMode, StepTrace};
use super::optim::{adam_step, AdamConfig, AdamState, Plateau};
use crate::data::{Window, WindowedDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_w: usize,
    pub n_p: usize,
    /// Plateau patience in epochs.
    pub patience: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluate the windows of a batch on the rayon pool. Results are
    /// identical either way.
    pub parallel: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            n_w: 100,
            n_p: 20,
            patience: 10,
            lr: 1e-3,
            lr_decay_factor: 0.5,
            adam: AdamConfig::default(),
            seed: 0,
            parallel: true,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.n_w == 0
            || self.n_p == 0
            || self.patience == 0
        {
            return Err(Error::InvalidParams(
                "epochs, batch_size, n_w, n_p and patience must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParams(
                "learning rate must be positive".into(),
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::InvalidParams(
                "lr_decay_factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the batch losses.
    pub train_loss: f64,
    /// Sum over validation batches of the batch MSE; drives scheduling and model selection.
    pub val_loss_sum: f64,
    /// MSE over every validation prediction.
    pub val_mse: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial_val_loss_sum: f64,
    pub initial_val_mse: f64,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the returned model.
    pub best_epoch: Option<usize>,
    pub optimizer_steps: usize,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|i| &self.epochs[i])
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Validation losses of `model` on `ds`: (sum of batch MSEs, overall MSE).
pub fn evaluate(
    model: &RnnModel,
    ds: &WindowedDataset,
    batch_size: usize,
    parallel: bool,
) -> (f64, f64) {
    if ds.is_empty() {
        return (0.0, 0.0);
    }
    let one = |i: usize| window_sse(model, &ds.window(i), ds.n_w, ds.n_p, None, None);
    let sse: Vec<f64> = if parallel {
        (0..ds.len()).into_par_iter().map(one).collect()
    } else {
        (0..ds.len()).map(one).collect()
    };
    let per = ((ds.n_p + 1) * model.arch.state_dim) as f64;
    let sum = sse
        .chunks(batch_size.max(1))
        .map(|b| b.iter().sum::<f64>() / (b.len() as f64 * per))
        .sum();
    let mse = sse.iter().sum::<f64>() / (sse.len() as f64 * per);
    (sum, mse)
}

fn check_sets(
    arch: &RnnArch,
    spec: &TrainSpec,
    train: &WindowedDataset,
    val: &WindowedDataset,
) -> Result<()> {
    arch.validate()?;
    spec.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ds in [train, val] {
        if ds.n_w != spec.n_w || ds.n_p != spec.n_p {
            return Err(Error::InvalidParams(format!(
                "dataset windowed with n_w = {}, n_p = {} but spec has {}, {}",
                ds.n_w, ds.n_p, spec.n_w, spec.n_p
            )));
        }
        let src = ds.source();
        if src.state_dim() != arch.state_dim || src.input_dim() != arch.control_dim() {
            return Err(Error::dim(
                "dataset columns",
                arch.input_dim,
                src.state_dim() + src.input_dim(),
            ));
        }
    }
    Ok(())
}

/// Epoch-by-epoch driver of warm-up + self-loop training.
#[derive(Clone, Debug)]
pub struct Trainer {
    spec: TrainSpec,
    model: RnnModel,
    best: RnnModel,
    best_val: f64,
    adam: AdamState,
    plateau: Plateau,
    rng: ChaCha8Rng,
    train: WindowedDataset,
    val: WindowedDataset,
    history: History,
}

impl Trainer {
    pub fn new(
        arch: RnnArch,
        spec: TrainSpec,
        train: &WindowedDataset,
        val: &WindowedDataset,
    ) -> Result<Self> {
        check_sets(&arch, &spec, train, val)?;
        let model = RnnModel::init(arch, spec.seed)?;
        Self::from_model(model, spec, train, val)
    }

    /// Continues training from an existing model.
    pub fn from_model(
        model: RnnModel,
        spec: TrainSpec,
        train: &WindowedDataset,
        val: &WindowedDataset,
    ) -> Result<Self> {
        check_sets(&model.arch, &spec, train, val)?;
        let (sum, mse) = evaluate(&model, val, spec.batch_size, spec.parallel);
        let history = History {
            initial_val_loss_sum: sum,
            initial_val_mse: mse,
            ..History::default()
        };
        Ok(Self {
            adam: AdamState::new(model.params.len(), spec.adam),
            plateau: Plateau::new(spec.lr, spec.lr_decay_factor, spec.patience),
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_7a1e),
            best: model.clone(),
            best_val: f64::INFINITY,
            model,
            train: train.clone(),
            val: val.clone(),
            history,
            spec,
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.epochs.len()
    }

    pub fn is_done(&self) -> bool {
        self.epoch() >= self.spec.epochs
    }

    pub fn model(&self) -> &RnnModel {
        &self.model
    }

    pub fn best_model(&self) -> &RnnModel {
        &self.best
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn lr(&self) -> f64 {
        self.plateau.lr
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let spec = &self.spec;
        let epoch = self.history.epochs.len();
        let lr = self.plateau.lr;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let dropout = self.model.arch.effective_dropout() > 0.0;
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for idx in order.chunks(spec.batch_size) {
            let windows: Vec<Window<'_>> = idx.iter().map(|&i| self.train.window(i)).collect();
            let seeds: Option<Vec<u64>> =
                dropout.then(|| idx.iter().map(|_| self.rng.random()).collect());
            let g = gradients_with(
                &self.model,
                &windows,
                spec.n_w,
                spec.n_p,
                seeds.as_deref(),
                spec.parallel,
            )?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam_step(&mut self.model.params, &g.grad, &mut self.adam, lr);
            loss_sum += g.loss;
            steps += 1;
        }
        if !self.model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let train_loss = loss_sum / steps as f64;
        let (val_loss_sum, val_mse) = if self.val.is_empty() {
            (train_loss, train_loss)
        } else {
            evaluate(&self.model, &self.val, spec.batch_size, spec.parallel)
        };
        self.plateau.update(val_loss_sum);
        if val_loss_sum < self.best_val {
            self.best_val = val_loss_sum;
            self.best = self.model.clone();
            self.history.best_epoch = Some(epoch);
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss_sum,
            val_mse,
            lr,
            steps,
        };
        self.history.optimizer_steps += steps;
        self.history.epochs.push(rec.clone());
        log::debug!("epoch {epoch}: train {train_loss:.3e}, val {val_loss_sum:.3e}, lr {lr:.1e}");
        Ok(rec)
    }

    /// Best-validation model and the full history.
    pub fn finish(self) -> (RnnModel, History) {
        (self.best, self.history)
    }
}

/// Trains a fresh model: every window starts from a zero hidden state, warms
/// it on `n_w` measured steps, then predicts `n_p + 1` states from its own
/// outputs. One Adam step per batch; returns the best-validation model.
pub fn train(
    arch: RnnArch,
    spec: &TrainSpec,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
) -> Result<(RnnModel, History)> {
    let mut t = Trainer::new(arch, spec.clone(), train_set, val_set)?;
    while !t.is_done() {
        t.run_epoch()?;
    }
    Ok(t.finish())
}

/// Contiguous pieces of `n_w + n_p + 1` steps covering the training runs.
fn chunks(train: &WindowedDataset, len: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for run in train.contiguous_runs() {
        let mut a = run.start;
        while a + len < run.end {
            out.push(a..a + len + 1);
            a += len;
        }
    }
    out
}

/// Stateful baseline: the training data is cut into consecutive chunks that
/// are dealt to `n_b` streams. Each chunk is predicted in closed loop from the
/// previous chunk's final prediction and hidden state (both detached), the
/// loss covers every step, and the first chunk of a run starts from zero
/// hidden state and the measured state.
pub fn train_conventional(
    arch: RnnArch,
    spec: &TrainSpec,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
) -> Result<(RnnModel, History)> {
    check_sets(&arch, spec, train_set, val_set)?;
    let len = spec.n_w + spec.n_p + 1;
    let all = chunks(train_set, len);
    if all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_streams = spec.batch_size.min(all.len());
    let per = all.len().div_ceil(n_streams);
    let streams: Vec<&[Range<usize>]> = all.chunks(per).collect();
    let n_batches = streams.iter().map(|s| s.len()).max().unwrap_or(0);
    let src = train_set.source().clone();

    let mut model = RnnModel::init(arch, spec.seed)?;
    let mut adam = AdamState::new(model.params.len(), spec.adam);
    let mut plateau = Plateau::new(spec.lr, spec.lr_decay_factor, spec.patience);
    let (sum, mse) = evaluate(&model, val_set, spec.batch_size, spec.parallel);
    let mut history = History {
        initial_val_loss_sum: sum,
        initial_val_mse: mse,
        ..History::default()
    };
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let s_dim = model.arch.state_dim;

    for epoch in 0..spec.epochs {
        let lr = plateau.lr;
        let mut carry: Vec<Option<(HiddenState, Vec<f64>, usize)>> = vec![None; streams.len()];
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for b in 0..n_batches {
            let active: Vec<usize> = (0..streams.len())
                .filter(|&s| b < streams[s].len())
                .collect();
            let n_total = (active.len() * len * s_dim) as f64;
            let m = &model;
            let one = |&si: &usize| {
                let r = streams[si][b].clone();
                let mut x = src.x.slice(s![r.clone(), ..]).to_owned();
                let u = src.u.slice(s![r.start..r.end - 1, ..]);
                let h0 = match &carry[si] {
                    Some((h, xhat, end)) if *end == r.start => {
                        x.row_mut(0).assign(&ndarray::ArrayView1::from(&xhat[..]));
                        h.clone()
                    }
                    _ => HiddenState::zeros(&m.arch),
                };
                let mut traces: Vec<StepTrace> = Vec::new();
                let out = unroll(
                    m,
                    x.view(),
                    u,
                    0,
                    len,
                    HiddenMode::Propagate,
                    h0,
                    None,
                    Some(&mut traces),
                );
                let diff: Array2<f64> = &out.predictions - &x.slice(s![1.., ..]);
                let sse: f64 = diff.iter().map(|d| d * d).sum();
                let mut g = vec![0.0; m.params.len()];
                backward(
                    m,
                    &traces,
                    0,
                    diff.mapv(|d| 2.0 * d / n_total).view(),
                    &mut g,
                );
                let last = out.predictions.row(len - 1).to_vec();
                (sse, g, (out.last, last, r.end - 1))
            };
            let parts: Vec<_> = if spec.parallel {
                active.par_iter().map(one).collect()
            } else {
                active.iter().map(one).collect()
            };
            let mut grad = vec![0.0; model.params.len()];
            let mut sse = 0.0;
            for (&si, (s, g, c)) in active.iter().zip(parts) {
                sse += s;
                for (a, v) in grad.iter_mut().zip(&g) {
                    *a += v;
                }
                carry[si] = Some(c);
            }
            let loss = sse / n_total;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam_step(&mut model.params, &grad, &mut adam, lr);
            loss_sum += loss;
            steps += 1;
        }
        let train_loss = loss_sum / steps as f64;
        let (val_loss_sum, val_mse) = if val_set.is_empty() {
            (train_loss, train_loss)
        } else {
            evaluate(&model, val_set, spec.batch_size, spec.parallel)
        };
        plateau.update(val_loss_sum);
        if val_loss_sum < best_val {
            best_val = val_loss_sum;
            best = model.clone();
            history.best_epoch = Some(epoch);
        }
        history.optimizer_steps += steps;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss_sum,
            val_mse,
            lr,
            steps,
        });
    }
    Ok((best, history))
}
