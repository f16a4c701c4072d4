//! Configuration file and the end-to-end pipeline built on it.
//!
//! Every random stream of an experiment is derived from the top-level `seed`;
//! seed fields inside sections are overwritten when the pipeline runs.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::closed_loop::{run_closed_loop, Controller, LoopOptions};
use super::collect::{collect, CollectOptions};
use super::eval::{eval_horizon_ablation, eval_long_prediction, EvalReport, Variant};
use super::pi::PiGains;
use super::reference::{gen_reference_with, ReferenceParams};
use super::stream_seed;
use super::trajectory::{compute_rmse, mean, TrajectoryLog};
use crate::data::{
    fit_scaler, gen_ramp_excitation, gen_step_excitation, make_sequences, split, ScaledSeries,
    Scaler, SeriesLog, StateVariant, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::hpo::{run_hpo, AshaConfig, HpoOptions, HpoResult, Schedule, SearchSpace};
use crate::nmpc::{OcpSpec, PhysicalBounds};
use crate::plant::{Plant, PlantParams};
use crate::rnn::{
    train, train_conventional, CellKind, HiddenMode, History, RnnArch, RnnModel, TrainSpec,
};

/// Stream tags combined with the top-level seed.
pub mod streams {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const REFERENCE: u64 = 5;
    pub const LOOP: u64 = 6;
    pub const HPO: u64 = 7;
    pub const EXCITATION_TRAIN: u64 = 8;
    pub const EXCITATION_TEST: u64 = 9;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    /// Seconds of step excitation used for training and validation.
    pub train_duration: f64,
    /// Seconds of ramp excitation held out for testing.
    pub test_duration: f64,
    pub step_hold: f64,
    pub ramp_time: f64,
    pub ramp_hold: f64,
    /// Upper bound of the excitation in bar.
    pub p_max: f64,
    pub log_rate: f64,
    pub velocity_cutoff: f64,
    pub hold_commands: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            train_duration: 600.0,
            test_duration: 300.0,
            step_hold: 4.0,
            ramp_time: 2.0,
            ramp_hold: 2.0,
            p_max: 0.7,
            log_rate: 5.0,
            velocity_cutoff: 5.0,
            hold_commands: true,
        }
    }
}

impl CollectConfig {
    pub fn options(&self) -> CollectOptions {
        CollectOptions {
            log_rate: self.log_rate,
            velocity_cutoff: self.velocity_cutoff,
            hold_commands: self.hold_commands,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub residual: bool,
    pub variant: StateVariant,
    /// Angle channels are scaled from `±angle_range_deg` instead of the data
    /// extrema, so that the plant's angle limit stays inside `[-1, 1]`.
    pub angle_range_deg: Option<f64>,
    /// Pressure channels are scaled from `[0, pressure_range]` of the plant.
    pub pin_pressures: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden_dim: 32,
            layers: 1,
            dropout: 0.0,
            residual: false,
            variant: StateVariant::Position,
            angle_range_deg: Some(22.0),
            pin_pressures: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Window stride in samples; defaults to `n_p`.
    pub stride: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            stride: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoConfig {
    pub space: SearchSpace,
    pub asha: AshaConfig,
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub control_rate: f64,
    pub warmup_s: f64,
    pub duration_s: f64,
    pub warmup_amplitude: f64,
    pub u_mean_bar: f64,
    pub reference: ReferenceParams,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let l = LoopOptions::default();
        Self {
            control_rate: l.control_rate,
            warmup_s: l.warmup_s,
            duration_s: l.duration_s,
            warmup_amplitude: l.warmup_amplitude,
            u_mean_bar: l.u_mean_bar,
            reference: ReferenceParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Measurements fed before the long self-loop prediction.
    pub warmup_s: f64,
    pub probes: usize,
    pub horizon: usize,
    /// Measurements fed before each probe of the horizon ablation.
    pub probe_warmup_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            warmup_s: 50.0,
            probes: 20,
            horizon: 4,
            probe_warmup_s: 20.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiConfig {
    pub gains: PiGains,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub plant: PlantParams,
    pub collect: CollectConfig,
    pub model: ModelConfig,
    pub train: TrainSpec,
    pub split: SplitConfig,
    pub hpo: HpoConfig,
    pub ocp: OcpSpec,
    /// Physical-unit bounds; when present they replace `u_mean`, `u_min`,
    /// `u_max` and `x_max` of `ocp` through the model's scaler.
    pub physical: Option<PhysicalBounds>,
    pub pi: PiConfig,
    pub control: ControlConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn plant(&self) -> Result<Plant> {
        Plant::new(self.plant.clone())
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            seed: stream_seed(self.seed, streams::TRAIN),
            ..self.train.clone()
        }
    }

    pub fn asha(&self) -> AshaConfig {
        AshaConfig {
            seed: stream_seed(self.seed, streams::HPO),
            ..self.hpo.asha.clone()
        }
    }

    pub fn arch(&self) -> RnnArch {
        let n = self.plant.n_joints;
        RnnArch {
            residual: self.model.residual,
            ..RnnArch::new(
                self.model.cell,
                self.model.variant.state_dim(n),
                2 * n,
                self.model.hidden_dim,
                self.model.layers,
            )
            .with_dropout(self.model.dropout)
        }
    }

    pub fn reference_seed(&self) -> u64 {
        stream_seed(self.seed, streams::REFERENCE)
    }

    pub fn loop_options(&self) -> LoopOptions {
        LoopOptions {
            control_rate: self.control.control_rate,
            warmup_s: self.control.warmup_s,
            duration_s: self.control.duration_s,
            warmup_amplitude: self.control.warmup_amplitude,
            u_mean_bar: self.control.u_mean_bar,
            seed: stream_seed(self.seed, streams::LOOP),
        }
    }

    /// OCP settings for `model`, with physical bounds converted if given.
    pub fn ocp_spec(&self, model: &RnnModel) -> Result<OcpSpec> {
        let spec = OcpSpec {
            control_rate: self.control.control_rate,
            ..self.ocp.clone()
        };
        let spec = match (&self.physical, &model.scaler) {
            (Some(b), Some(s)) => spec.with_physical(b, s)?,
            (Some(_), None) => {
                return Err(Error::InvalidParams(
                    "physical bounds need a model scaler".into(),
                ))
            }
            (None, _) => spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Step-excitation training log and ramp-excitation test log.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub train: SeriesLog,
    pub test: SeriesLog,
}

pub fn collect_train_log(cfg: &Config) -> Result<SeriesLog> {
    let c = &cfg.collect;
    let n = cfg.plant.n_joints;
    let ex = gen_step_excitation(
        n,
        c.step_hold,
        c.train_duration,
        c.p_max,
        stream_seed(cfg.seed, streams::EXCITATION_TRAIN),
    )?;
    collect(
        &cfg.plant()?,
        &ex,
        c.train_duration,
        stream_seed(cfg.seed, streams::TRAIN_DATA),
        &c.options(),
    )
}

pub fn collect_test_log(cfg: &Config) -> Result<SeriesLog> {
    let c = &cfg.collect;
    let n = cfg.plant.n_joints;
    let ex = gen_ramp_excitation(
        n,
        c.ramp_time,
        c.ramp_hold,
        c.test_duration,
        c.p_max,
        stream_seed(cfg.seed, streams::EXCITATION_TEST),
    )?;
    collect(
        &cfg.plant()?,
        &ex,
        c.test_duration,
        stream_seed(cfg.seed, streams::TEST_DATA),
        &c.options(),
    )
}

pub fn collect_datasets(cfg: &Config) -> Result<Datasets> {
    Ok(Datasets {
        train: collect_train_log(cfg)?,
        test: collect_test_log(cfg)?,
    })
}

/// Scaler fitted on `log`, with angle and pressure channels pinned as
/// configured.
pub fn fit_model_scaler(cfg: &Config, log: &SeriesLog) -> Result<Scaler> {
    let mut s = fit_scaler(&[log], cfg.model.variant)?;
    let n = log.n_joints();
    if let Some(a) = cfg.model.angle_range_deg {
        for j in 0..n {
            s.pin(j, -a, a)?;
        }
    }
    if cfg.model.pin_pressures {
        for c in s.n_state..s.channels.len() {
            s.pin(c, 0.0, cfg.plant.pressure_range)?;
        }
    }
    Ok(s)
}

/// Scaled training log cut into windows and split by time.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub scaler: Scaler,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
}

pub fn prepare(cfg: &Config, log: &SeriesLog) -> Result<Prepared> {
    let scaler = fit_model_scaler(cfg, log)?;
    let series = Arc::new(ScaledSeries::from_log("train", log, &scaler)?);
    let stride = cfg.split.stride.unwrap_or(cfg.train.n_p);
    let all = make_sequences(series, cfg.train.n_w, cfg.train.n_p, stride)?;
    let (train, val) = split(
        &all,
        cfg.split.train_fraction,
        stream_seed(cfg.seed, streams::SPLIT),
    )?;
    if val.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} windows leave no validation window after purging overlaps; \
             collect a longer log or raise split.stride",
            all.len()
        )));
    }
    Ok(Prepared { scaler, train, val })
}

/// Warm-up + self-loop training of the configured architecture.
pub fn train_model(cfg: &Config, data: &Prepared) -> Result<(RnnModel, History)> {
    let (m, h) = train(cfg.arch(), &cfg.train_spec(), &data.train, &data.val)?;
    Ok((m.with_scaler(data.scaler.clone()), h))
}

/// Conventionally trained counterpart used as the ablation reference.
pub fn train_reference_model(cfg: &Config, data: &Prepared) -> Result<(RnnModel, History)> {
    let (m, h) = train_conventional(cfg.arch(), &cfg.train_spec(), &data.train, &data.val)?;
    Ok((m.with_scaler(data.scaler.clone()), h))
}

/// Random search with ASHA over the configured space; the best model gets
/// the dataset scaler attached.
pub fn search_hyperparameters(
    cfg: &Config,
    data: &Prepared,
    run_dir: Option<&Path>,
) -> Result<HpoResult> {
    let opts = HpoOptions {
        schedule: cfg.hpo.schedule,
        run_dir: run_dir.map(Path::to_path_buf),
    };
    let mut r = run_hpo(
        &cfg.hpo.space,
        &cfg.asha(),
        &cfg.arch(),
        &cfg.train_spec(),
        &data.train,
        &data.val,
        &opts,
    )?;
    r.best_model = r.best_model.with_scaler(data.scaler.clone());
    Ok(r)
}

/// Long self-loop prediction plus the hidden-state ablation over probes.
/// `reference` adds the conventionally trained model as a further variant.
pub fn evaluate_model(
    cfg: &Config,
    model: &RnnModel,
    reference: Option<&RnnModel>,
    test: &SeriesLog,
) -> Result<EvalReport> {
    let mut report = eval_long_prediction(model, test, cfg.eval.warmup_s)?.report;
    let mut variants = vec![
        Variant {
            name: "propagate",
            model,
            mode: HiddenMode::Propagate,
        },
        Variant {
            name: "freeze",
            model,
            mode: HiddenMode::Freeze,
        },
        Variant {
            name: "zero",
            model,
            mode: HiddenMode::Zero,
        },
    ];
    if let Some(r) = reference {
        variants.push(Variant {
            name: "conventional",
            model: r,
            mode: HiddenMode::Propagate,
        });
    }
    report.horizon = eval_horizon_ablation(
        &variants,
        test,
        cfg.eval.probe_warmup_s,
        cfg.eval.probes,
        cfg.eval.horizon,
    )?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Nmpc,
    Pi,
}

/// Tracking run on the configured reference. `model` is required for NMPC;
/// `checkpoint` is recorded in the log metadata.
pub fn run_control(
    cfg: &Config,
    kind: ControllerKind,
    model: Option<&RnnModel>,
    checkpoint: Option<&str>,
) -> Result<TrajectoryLog> {
    let plant = cfg.plant()?;
    let reference = gen_reference_with(
        cfg.plant.n_joints,
        cfg.control.duration_s,
        cfg.reference_seed(),
        &cfg.control.reference,
    )?;
    let opts = cfg.loop_options();
    let gains = vec![cfg.pi.gains; cfg.plant.n_joints];
    let spec;
    let controller = match kind {
        ControllerKind::Nmpc => {
            let model = model.ok_or_else(|| {
                Error::InvalidParams("NMPC control needs a model checkpoint".into())
            })?;
            spec = cfg.ocp_spec(model)?;
            Controller::Nmpc { model, spec: &spec }
        }
        ControllerKind::Pi => Controller::Pi { gains: &gains },
    };
    let mut log = run_closed_loop(&plant, controller, &reference, &opts)?;
    log.meta.checkpoint = checkpoint.map(str::to_string);
    log.meta.config_hash = Some(cfg.hash()?);
    log.meta.config = Some(cfg.to_toml()?);
    log.meta.reference_seed = cfg.reference_seed();
    Ok(log)
}

/// Reruns the experiment recorded in `meta`. The configuration embedded in
/// the metadata is used and checked against its hash.
pub fn replay(
    meta: &super::trajectory::RunMetadata,
    model: Option<&RnnModel>,
) -> Result<TrajectoryLog> {
    let text = meta
        .config
        .as_deref()
        .ok_or_else(|| Error::Format("log metadata carries no configuration".into()))?;
    let cfg = Config::from_toml(text)?;
    if meta.config_hash.as_deref() != Some(cfg.hash()?.as_str()) {
        return Err(Error::Format("configuration hash mismatch".into()));
    }
    let kind = match meta.controller.as_str() {
        "nmpc" => ControllerKind::Nmpc,
        "pi" => ControllerKind::Pi,
        other => return Err(Error::Format(format!("unknown controller {other:?}"))),
    };
    run_control(&cfg, kind, model, meta.checkpoint.as_deref())
}

/// Per-joint tracking RMSE over the control phase and its mean.
pub fn tracking_report(log: &TrajectoryLog) -> Result<EvalReport> {
    let rmse = compute_rmse(log, log.control_interval())?;
    Ok(EvalReport {
        mean_rmse: mean(&rmse),
        per_joint_rmse: rmse,
        ..EvalReport::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = Config::from_toml("seed = 3\n[model]\nhidden_dim = 8\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.hidden_dim, 8);
        assert_eq!(cfg.ocp, OcpSpec::default());
        assert!(Config::from_toml("sede = 3\n").is_err());
        for table in [
            "plant",
            "plant.bouc_wen",
            "train",
            "train.adam",
            "ocp",
            "hpo.asha",
        ] {
            assert!(Config::from_toml(&format!("[{table}]\nbogus = 1\n")).is_err());
        }
        let cfg = Config::from_toml("[train.adam]\nbeta1 = 0.8\n").unwrap();
        assert_eq!(cfg.train.adam.beta2, 0.999);
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let b = Config {
            seed: 1,
            ..Config::default()
        };
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
