//! Trial scheduling on a bounded worker pool.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::asha::{
    asha_decide, AshaConfig, Decision, Event, EventLog, HpoTrial, RungTable, TrialStatus,
};
use super::report::export_trials_report;
use super::space::{sample_config, SearchSpace, TrialConfig};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::rnn::{save_checkpoint, RnnArch, RnnModel, TrainSpec, Trainer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Workers advance in lockstep, one epoch per busy worker per tick, and
    /// decisions are applied in worker order. Reproducible event log.
    #[default]
    Deterministic,
    /// Free-running OS threads; decision order follows wall-clock arrival.
    Threads,
}

#[derive(Clone, Debug, Default)]
pub struct HpoOptions {
    pub schedule: Schedule,
    /// Receives per-trial checkpoints, `trials.csv` and `events.jsonl`.
    pub run_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct HpoResult {
    pub best: HpoTrial,
    pub best_model: RnnModel,
    /// All trials, ordered by id.
    pub trials: Vec<HpoTrial>,
    pub log: EventLog,
}

impl HpoResult {
    pub fn consumed_epochs(&self) -> usize {
        self.trials.iter().map(HpoTrial::epochs).sum()
    }
}

pub fn trial_seed(base: u64, id: usize) -> u64 {
    base ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn trial_arch(template: &RnnArch, c: &TrialConfig) -> RnnArch {
    RnnArch {
        hidden_dim: c.hidden_dim,
        layers: c.layers,
        dropout: c.dropout,
        ..template.clone()
    }
}

pub fn trial_spec(base: &TrainSpec, c: &TrialConfig, asha: &AshaConfig, seed: u64) -> TrainSpec {
    TrainSpec {
        batch_size: c.batch_size,
        lr: c.lr,
        epochs: asha.max_epochs,
        seed,
        parallel: false,
        ..base.clone()
    }
}

struct Run {
    trial: HpoTrial,
    trainer: Trainer,
    worker: usize,
}

/// Single writer of rung table and event log.
struct Authority {
    cfg: AshaConfig,
    table: RungTable,
    log: EventLog,
    active: usize,
    next: usize,
    done: Vec<HpoTrial>,
    best: Option<(f64, usize, RnnModel)>,
}

impl Authority {
    fn new(cfg: &AshaConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            table: RungTable::new(cfg),
            log: EventLog::default(),
            active: 0,
            next: 0,
            done: Vec::new(),
            best: None,
        }
    }

    fn claim(&mut self, worker: usize) -> Option<usize> {
        if self.next >= self.cfg.budget {
            return None;
        }
        let id = self.next;
        self.next += 1;
        self.active += 1;
        self.log.push(Event::WorkerAcquired {
            worker,
            trial: id,
            active: self.active,
        });
        Some(id)
    }

    fn started(&mut self, trial: &HpoTrial) {
        self.log.push(Event::TrialStarted {
            trial: trial.id,
            seed: trial.seed,
            config: trial.config.clone(),
        });
    }

    /// Records the epoch just finished; true when the trial should end.
    fn on_epoch(&mut self, trial: &mut HpoTrial) -> bool {
        let epochs = trial.epochs();
        let loss = trial.losses[epochs - 1];
        self.log.push(Event::EpochEnd {
            trial: trial.id,
            epoch: epochs,
            val_mse: loss,
        });
        if let Some(rung) = self.table.rung_at(epochs) {
            self.table.record(rung, trial.id, loss);
            let decision = asha_decide(trial, &self.table, &self.cfg);
            self.log.push(Event::Decision {
                trial: trial.id,
                rung,
                epochs,
                loss,
                decision,
                snapshot: self.table.losses(rung),
            });
            match decision {
                Decision::Promote => {
                    trial.rung = rung + 1;
                    trial.advance(TrialStatus::Promoted);
                }
                Decision::Stop => {
                    trial.advance(TrialStatus::Stopped);
                    return true;
                }
                Decision::Continue => {}
            }
        }
        if epochs >= self.cfg.max_epochs {
            trial.advance(TrialStatus::Completed);
            return true;
        }
        false
    }

    fn finish(&mut self, trial: HpoTrial, worker: usize, model: Option<RnnModel>) {
        self.log.push(Event::TrialFinished {
            trial: trial.id,
            status: trial.status,
            epochs: trial.epochs(),
            final_loss: trial.final_loss,
        });
        self.active -= 1;
        self.log.push(Event::WorkerReleased {
            worker,
            trial: trial.id,
            active: self.active,
        });
        if trial.status == TrialStatus::Completed {
            if let Some(m) = model {
                let better = match &self.best {
                    None => true,
                    Some((l, id, _)) => {
                        trial.final_loss < *l || (trial.final_loss == *l && trial.id < *id)
                    }
                };
                if better {
                    self.best = Some((trial.final_loss, trial.id, m));
                }
            }
        }
        self.done.push(trial);
    }
}

struct Setup<'a> {
    space: &'a SearchSpace,
    asha: &'a AshaConfig,
    template: &'a RnnArch,
    base: &'a TrainSpec,
    train: &'a WindowedDataset,
    val: &'a WindowedDataset,
    run_dir: Option<&'a Path>,
}

impl Setup<'_> {
    fn start(&self, id: usize, worker: usize) -> Result<Run> {
        let seed = trial_seed(self.asha.seed, id);
        let config = sample_config(self.space, seed)?;
        let trainer = Trainer::new(
            trial_arch(self.template, &config),
            trial_spec(self.base, &config, self.asha, seed),
            self.train,
            self.val,
        )?;
        Ok(Run {
            trial: HpoTrial::new(id, config, seed),
            trainer,
            worker,
        })
    }

    /// Fixes the trial's final loss and returns the model it hands back.
    fn conclude(&self, run: &mut Run) -> Result<Option<RnnModel>> {
        if run.trial.status == TrialStatus::Failed {
            return Ok(None);
        }
        let model = run.trainer.best_model().clone();
        run.trial.final_loss = run
            .trainer
            .history()
            .best()
            .map_or(f64::INFINITY, |r| r.val_mse);
        if let Some(dir) = self.run_dir {
            let path = dir.join(format!("trial_{:03}.json", run.trial.id));
            let meta = serde_json::json!({
                "trial": run.trial.id,
                "config": run.trial.config,
                "status": run.trial.status.as_str(),
            });
            save_checkpoint(
                &path,
                &model,
                run.trial.seed,
                meta,
                Some(run.trainer.history()),
            )?;
        }
        Ok(Some(model))
    }
}

fn step(run: &mut Run) -> Result<f64> {
    Ok(run.trainer.run_epoch()?.val_mse)
}

fn record_epoch(auth: &mut Authority, run: &mut Run, res: Result<f64>) -> bool {
    match res {
        Ok(loss) => {
            run.trial.losses.push(loss);
            auth.on_epoch(&mut run.trial)
        }
        Err(e) => {
            log::warn!("trial {} failed: {e}", run.trial.id);
            run.trial.advance(TrialStatus::Failed);
            true
        }
    }
}

fn run_deterministic(setup: &Setup<'_>) -> Result<Authority> {
    let mut auth = Authority::new(setup.asha);
    let workers = setup.asha.max_workers;
    let mut slots: Vec<Option<Run>> = (0..workers).map(|_| None).collect();
    loop {
        for (w, slot) in slots.iter_mut().enumerate() {
            if slot.is_none() {
                if let Some(id) = auth.claim(w) {
                    let run = setup.start(id, w)?;
                    auth.started(&run.trial);
                    *slot = Some(run);
                }
            }
        }
        if slots.iter().all(Option::is_none) {
            break;
        }
        let results: Vec<Option<Result<f64>>> =
            slots.par_iter_mut().map(|s| s.as_mut().map(step)).collect();
        for (slot, res) in slots.iter_mut().zip(results) {
            let (Some(run), Some(res)) = (slot.as_mut(), res) else {
                continue;
            };
            if record_epoch(&mut auth, run, res) {
                let mut run = slot.take().expect("occupied slot");
                let model = setup.conclude(&mut run)?;
                auth.finish(run.trial, run.worker, model);
            }
        }
    }
    Ok(auth)
}

fn run_threads(setup: &Setup<'_>) -> Result<Authority> {
    let auth = Mutex::new(Authority::new(setup.asha));
    let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for w in 0..setup.asha.max_workers {
            let (auth, errors) = (&auth, &errors);
            scope.spawn(move || loop {
                let claimed = auth.lock().expect("authority lock").claim(w);
                let Some(id) = claimed else { break };
                let mut run = match setup.start(id, w) {
                    Ok(r) => r,
                    Err(e) => {
                        errors.lock().expect("error lock").push(e);
                        auth.lock().expect("authority lock").active -= 1;
                        break;
                    }
                };
                auth.lock().expect("authority lock").started(&run.trial);
                loop {
                    let res = step(&mut run);
                    if record_epoch(&mut auth.lock().expect("authority lock"), &mut run, res) {
                        break;
                    }
                }
                match setup.conclude(&mut run) {
                    Ok(model) => auth
                        .lock()
                        .expect("authority lock")
                        .finish(run.trial, w, model),
                    Err(e) => errors.lock().expect("error lock").push(e),
                }
            });
        }
    });
    if let Some(e) = errors.into_inner().expect("error lock").into_iter().next() {
        return Err(e);
    }
    Ok(auth.into_inner().expect("authority lock"))
}

/// Random search with ASHA early stopping. Every trial trains a fresh model
/// from `template` with a sampled configuration; survivors train to
/// `max_epochs`. Returns the completed trial with the lowest validation MSE.
pub fn run_hpo(
    space: &SearchSpace,
    asha: &AshaConfig,
    template: &RnnArch,
    base: &TrainSpec,
    train: &WindowedDataset,
    val: &WindowedDataset,
    opts: &HpoOptions,
) -> Result<HpoResult> {
    asha.validate()?;
    space.validate()?;
    if let Some(dir) = &opts.run_dir {
        std::fs::create_dir_all(dir)?;
    }
    let setup = Setup {
        space,
        asha,
        template,
        base,
        train,
        val,
        run_dir: opts.run_dir.as_deref(),
    };
    let auth = match opts.schedule {
        Schedule::Deterministic => run_deterministic(&setup)?,
        Schedule::Threads => run_threads(&setup)?,
    };
    let mut trials = auth.done;
    trials.sort_by_key(|t| t.id);
    let (_, best_id, best_model) = auth
        .best
        .ok_or_else(|| Error::InsufficientData("no trial completed".into()))?;
    let best = trials[best_id].clone();
    if let Some(dir) = &opts.run_dir {
        export_trials_report(&trials, &dir.join("trials.csv"))?;
        std::fs::write(dir.join("events.jsonl"), auth.log.to_jsonl()?)?;
    }
    Ok(HpoResult {
        best,
        best_model,
        trials,
        log: auth.log,
    })
}
