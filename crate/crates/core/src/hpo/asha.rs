//! Asynchronous successive halving: rungs, decisions and the event log.

use serde::{Deserialize, Serialize};

use super::space::TrialConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AshaConfig {
    /// Epochs before the first stopping decision.
    pub grace_period: usize,
    pub max_epochs: usize,
    pub reduction_factor: usize,
    pub max_workers: usize,
    /// Number of trials to launch.
    pub budget: usize,
    pub seed: u64,
}

impl Default for AshaConfig {
    fn default() -> Self {
        Self {
            grace_period: 100,
            max_epochs: 300,
            reduction_factor: 2,
            max_workers: 4,
            budget: 32,
            seed: 0,
        }
    }
}

impl AshaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::BudgetZero);
        }
        if self.grace_period == 0 || self.grace_period > self.max_epochs {
            return Err(Error::InvalidParams(
                "need 1 <= grace_period <= max_epochs".into(),
            ));
        }
        if self.reduction_factor < 2 {
            return Err(Error::InvalidParams(
                "reduction_factor must be at least 2".into(),
            ));
        }
        if self.max_workers == 0 {
            return Err(Error::InvalidParams(
                "max_workers must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Epoch counts `grace · η^j` strictly below `max_epochs`.
    pub fn milestones(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut m = self.grace_period;
        while m < self.max_epochs {
            out.push(m);
            m = m.saturating_mul(self.reduction_factor.max(2));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    Stop,
    Promote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Promoted,
    Stopped,
    Completed,
    Failed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Running => "running",
            TrialStatus::Promoted => "promoted",
            TrialStatus::Stopped => "stopped",
            TrialStatus::Completed => "completed",
            TrialStatus::Failed => "failed",
        }
    }

    pub fn is_final(self) -> bool {
        matches!(
            self,
            TrialStatus::Stopped | TrialStatus::Completed | TrialStatus::Failed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpoTrial {
    pub id: usize,
    pub config: TrialConfig,
    pub seed: u64,
    /// Validation MSE after each epoch.
    pub losses: Vec<f64>,
    /// Rungs passed so far.
    pub rung: usize,
    pub status: TrialStatus,
    /// Validation MSE of the model the trial returns.
    pub final_loss: f64,
}

impl HpoTrial {
    pub fn new(id: usize, config: TrialConfig, seed: u64) -> Self {
        Self {
            id,
            config,
            seed,
            losses: Vec::new(),
            rung: 0,
            status: TrialStatus::Running,
            final_loss: f64::INFINITY,
        }
    }

    pub fn epochs(&self) -> usize {
        self.losses.len()
    }

    /// Moves to `next` unless that would go backwards.
    pub fn advance(&mut self, next: TrialStatus) {
        if next >= self.status && !self.status.is_final() {
            self.status = next;
        }
    }
}

/// Losses recorded at each rung, in arrival order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RungTable {
    pub milestones: Vec<usize>,
    pub rungs: Vec<Vec<(usize, f64)>>,
}

impl RungTable {
    pub fn new(cfg: &AshaConfig) -> Self {
        let milestones = cfg.milestones();
        Self {
            rungs: vec![Vec::new(); milestones.len()],
            milestones,
        }
    }

    pub fn rung_at(&self, epochs: usize) -> Option<usize> {
        self.milestones.iter().position(|m| *m == epochs)
    }

    pub fn record(&mut self, rung: usize, trial: usize, loss: f64) {
        let entries = &mut self.rungs[rung];
        if !entries.iter().any(|(t, _)| *t == trial) {
            entries.push((trial, loss));
        }
    }

    pub fn losses(&self, rung: usize) -> Vec<f64> {
        self.rungs[rung].iter().map(|(_, l)| *l).collect()
    }
}

/// Whether `loss` is among the best `max(1, ⌊n/η⌋)` of `recorded` (which
/// includes `loss` itself). Ties count in the trial's favour.
pub fn in_top_fraction(loss: f64, recorded: &[f64], eta: usize) -> bool {
    let k = (recorded.len() / eta.max(1)).max(1);
    let better = recorded.iter().filter(|l| **l < loss).count();
    better < k
}

/// Decision for `trial` after its latest epoch. At a milestone the trial is
/// ranked against every loss recorded at that rung so far (its own included,
/// added here if missing); elsewhere it continues.
pub fn asha_decide(trial: &HpoTrial, table: &RungTable, cfg: &AshaConfig) -> Decision {
    let epochs = trial.epochs();
    let Some(rung) = table.rung_at(epochs) else {
        return Decision::Continue;
    };
    let loss = trial.losses[epochs - 1];
    let mut recorded = table.losses(rung);
    if !table.rungs[rung].iter().any(|(t, _)| *t == trial.id) {
        recorded.push(loss);
    }
    if !loss.is_finite() {
        return Decision::Stop;
    }
    if in_top_fraction(loss, &recorded, cfg.reduction_factor) {
        Decision::Promote
    } else {
        Decision::Stop
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    WorkerAcquired {
        worker: usize,
        trial: usize,
        active: usize,
    },
    TrialStarted {
        trial: usize,
        seed: u64,
        config: TrialConfig,
    },
    EpochEnd {
        trial: usize,
        epoch: usize,
        val_mse: f64,
    },
    Decision {
        trial: usize,
        rung: usize,
        epochs: usize,
        loss: f64,
        decision: Decision,
        /// Losses recorded at the rung when the decision was taken, this trial's included.
        snapshot: Vec<f64>,
    },
    TrialFinished {
        trial: usize,
        status: TrialStatus,
        epochs: usize,
        final_loss: f64,
    },
    WorkerReleased {
        worker: usize,
        trial: usize,
        active: usize,
    },
}

/// An event with its logical timestamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<LoggedEvent>,
}

impl EventLog {
    pub fn push(&mut self, event: Event) {
        let seq = self.events.len() as u64;
        self.events.push(LoggedEvent { seq, event });
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { events })
    }

    /// Sum of training epochs over all trials.
    pub fn consumed_epochs(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.event, Event::EpochEnd { .. }))
            .count()
    }

    /// Largest number of simultaneously busy workers.
    pub fn peak_concurrency(&self) -> usize {
        let mut active = 0usize;
        let mut peak = 0;
        for e in &self.events {
            match e.event {
                Event::WorkerAcquired { .. } => {
                    active += 1;
                    peak = peak.max(active);
                }
                Event::WorkerReleased { .. } => active = active.saturating_sub(1),
                _ => {}
            }
        }
        peak
    }
}

/// Replays `log` and checks the scheduler invariants: timestamps strictly
/// increase, epochs arrive in order, no decision precedes the grace period,
/// every decision follows the rung-rank rule against the losses recorded at
/// that rung up to that point, stopped trials train no further, and at most
/// `max_workers` workers are busy at once.
pub fn verify_log(log: &EventLog, cfg: &AshaConfig) -> std::result::Result<(), String> {
    let mut table = RungTable::new(cfg);
    let mut epochs: std::collections::HashMap<usize, usize> = Default::default();
    let mut stopped = std::collections::HashSet::new();
    let mut active = 0usize;
    let mut last_seq = None;
    for e in &log.events {
        if last_seq.is_some_and(|s| e.seq <= s) {
            return Err(format!("timestamp {} does not increase", e.seq));
        }
        last_seq = Some(e.seq);
        match &e.event {
            Event::WorkerAcquired { .. } => {
                active += 1;
                if active > cfg.max_workers {
                    return Err(format!("{active} busy workers at {}", e.seq));
                }
            }
            Event::WorkerReleased { .. } => active = active.saturating_sub(1),
            Event::EpochEnd { trial, epoch, .. } => {
                if stopped.contains(trial) {
                    return Err(format!("trial {trial} trained after stopping"));
                }
                let done = epochs.entry(*trial).or_insert(0);
                if *epoch != *done + 1 {
                    return Err(format!("trial {trial} reported epoch {epoch} after {done}"));
                }
                *done = *epoch;
            }
            Event::Decision {
                trial,
                rung,
                epochs: at,
                loss,
                decision,
                snapshot,
            } => {
                if *at < cfg.grace_period {
                    return Err(format!(
                        "trial {trial} decided at epoch {at} < grace period"
                    ));
                }
                if table.milestones.get(*rung) != Some(at) {
                    return Err(format!("trial {trial} decided off-milestone at epoch {at}"));
                }
                table.record(*rung, *trial, *loss);
                let recorded = table.losses(*rung);
                if &recorded != snapshot {
                    return Err(format!(
                        "trial {trial} rung {rung} snapshot differs from replay"
                    ));
                }
                let promote =
                    loss.is_finite() && in_top_fraction(*loss, &recorded, cfg.reduction_factor);
                let expected = if promote {
                    Decision::Promote
                } else {
                    Decision::Stop
                };
                if *decision != expected {
                    return Err(format!(
                        "trial {trial} got {decision:?}, rank rule says {expected:?}"
                    ));
                }
                if *decision == Decision::Stop {
                    stopped.insert(*trial);
                }
            }
            Event::TrialStarted { .. } | Event::TrialFinished { .. } => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AshaConfig {
        AshaConfig {
            grace_period: 10,
            max_epochs: 30,
            reduction_factor: 2,
            max_workers: 2,
            budget: 4,
            seed: 0,
        }
    }

    fn trial(id: usize, epochs: usize, loss: f64) -> HpoTrial {
        let mut t = HpoTrial::new(
            id,
            TrialConfig {
                hidden_dim: 1,
                layers: 1,
                batch_size: 1,
                dropout: 0.0,
                lr: 1e-3,
            },
            0,
        );
        t.losses = vec![loss; epochs];
        t
    }

    #[test]
    fn milestones_below_max() {
        assert_eq!(cfg().milestones(), vec![10, 20]);
        let full_scale = AshaConfig {
            grace_period: 100,
            max_epochs: 300,
            ..cfg()
        };
        assert_eq!(full_scale.milestones(), vec![100, 200]);
    }

    #[test]
    fn first_arrival_promotes() {
        let table = RungTable::new(&cfg());
        assert_eq!(
            asha_decide(&trial(0, 10, 5.0), &table, &cfg()),
            Decision::Promote
        );
    }

    #[test]
    fn third_of_four_stops() {
        let mut table = RungTable::new(&cfg());
        for (i, l) in [0.1, 0.2, 0.3, 0.4].into_iter().enumerate() {
            table.record(0, i, l);
        }
        assert_eq!(
            asha_decide(&trial(2, 10, 0.3), &table, &cfg()),
            Decision::Stop
        );
        assert_eq!(
            asha_decide(&trial(1, 10, 0.2), &table, &cfg()),
            Decision::Promote
        );
    }

    #[test]
    fn below_milestone_continues() {
        let table = RungTable::new(&cfg());
        for e in [1, 9, 11, 19, 21, 30] {
            assert_eq!(
                asha_decide(&trial(0, e, 1.0), &table, &cfg()),
                Decision::Continue
            );
        }
    }

    #[test]
    fn status_only_moves_forward() {
        let mut t = trial(0, 0, 0.0);
        t.advance(TrialStatus::Promoted);
        t.advance(TrialStatus::Running);
        assert_eq!(t.status, TrialStatus::Promoted);
        t.advance(TrialStatus::Stopped);
        t.advance(TrialStatus::Completed);
        assert_eq!(t.status, TrialStatus::Stopped);
    }

    #[test]
    fn verify_rejects_early_decision() {
        let mut log = EventLog::default();
        log.push(Event::Decision {
            trial: 0,
            rung: 0,
            epochs: 5,
            loss: 1.0,
            decision: Decision::Promote,
            snapshot: vec![1.0],
        });
        assert!(verify_log(&log, &cfg()).is_err());
    }

    #[test]
    fn log_round_trips_through_jsonl() {
        let mut log = EventLog::default();
        log.push(Event::EpochEnd {
            trial: 3,
            epoch: 1,
            val_mse: 0.25,
        });
        log.push(Event::Decision {
            trial: 3,
            rung: 0,
            epochs: 10,
            loss: 0.25,
            decision: Decision::Stop,
            snapshot: vec![0.1, 0.25],
        });
        let back = EventLog::from_jsonl(&log.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, log);
    }
}
