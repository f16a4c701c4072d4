//! Command-line front end for data collection, training, evaluation and
//! closed-loop control on the simulated soft robot.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use rnnmpc_core::data::SeriesLog;
use rnnmpc_core::rnn::{load_checkpoint, save_checkpoint, RnnModel};
use rnnmpc_core::runtime::{
    collect_test_log, collect_train_log, eval_long_prediction, evaluate_model, prepare, replay,
    run_control, search_hyperparameters, tracking_report, train_model, train_reference_model,
    Config, ControllerKind, TrajectoryLog,
};

#[derive(Parser)]
#[command(name = "rnnmpc", version, about)]
struct Cli {
    /// TOML configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the top-level seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Train,
    Test,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Nmpc,
    Pi,
}

#[derive(Subcommand)]
enum Command {
    /// Drive the plant with step (training) and ramp (test) excitation and
    /// write `train.csv` / `test.csv`.
    Collect {
        #[arg(long, value_enum, default_value = "both")]
        which: Which,
    },
    /// Fit the scaler and cut the training log into windows; writes
    /// `scaler.json` and `split.json`.
    Prepare {
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Train a model on the training log; writes `model.json` and `model.bin`.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Stateful batch training instead of warm-up + self-loop windows.
        #[arg(long)]
        conventional: bool,
        /// Checkpoint name inside the output directory.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Random search with ASHA; writes `hpo/` and the best checkpoint.
    Hpo {
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Long self-loop prediction and horizon ablation on the test log.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Conventionally trained model added to the ablation.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Closed-loop tracking of the configured reference.
    Control {
        #[arg(long, value_enum, default_value = "nmpc")]
        controller: ControllerArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-run a recorded control log and compare the result bit by bit.
    Replay {
        log: PathBuf,
        /// Checkpoint to use instead of the one recorded in the log.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_log(path: Option<&PathBuf>, out: &Path, default: &str) -> Result<SeriesLog> {
    let p = path.cloned().unwrap_or_else(|| out.join(default));
    SeriesLog::read_csv(&p).with_context(|| format!("reading {}", p.display()))
}

fn read_model(path: Option<&PathBuf>, out: &Path) -> Result<RnnModel> {
    let p = path.cloned().unwrap_or_else(|| out.join("model.json"));
    Ok(load_checkpoint(&p)
        .with_context(|| format!("reading {}", p.display()))?
        .0)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    match &cli.command {
        Command::Collect { which } => {
            if matches!(which, Which::Train | Which::Both) {
                let log = collect_train_log(&cfg)?;
                log.write_csv(&out.join("train.csv"))?;
                info!("train.csv: {} samples at {} Hz", log.len(), log.rate);
            }
            if matches!(which, Which::Test | Which::Both) {
                let log = collect_test_log(&cfg)?;
                log.write_csv(&out.join("test.csv"))?;
                info!("test.csv: {} samples at {} Hz", log.len(), log.rate);
            }
        }
        Command::Prepare { train } => {
            let log = read_log(train.as_ref(), out, "train.csv")?;
            let p = prepare(&cfg, &log)?;
            p.scaler.write_json(&out.join("scaler.json"))?;
            write_json(
                &out.join("split.json"),
                &serde_json::json!({
                    "n_w": p.train.n_w,
                    "n_p": p.train.n_p,
                    "train_offsets": p.train.offsets(),
                    "val_offsets": p.val.offsets(),
                }),
            )?;
            info!(
                "{} training / {} validation windows",
                p.train.len(),
                p.val.len()
            );
        }
        Command::Train {
            train,
            conventional,
            name,
        } => {
            let log = read_log(train.as_ref(), out, "train.csv")?;
            let p = prepare(&cfg, &log)?;
            let (model, history) = if *conventional {
                train_reference_model(&cfg, &p)?
            } else {
                train_model(&cfg, &p)?
            };
            let spec = cfg.train_spec();
            save_checkpoint(
                &out.join(format!("{name}.json")),
                &model,
                spec.seed,
                serde_json::json!({
                    "spec": spec,
                    "conventional": conventional,
                    "config_hash": cfg.hash()?,
                }),
                Some(&history),
            )?;
            if let Some(b) = history.best() {
                info!("best validation MSE {:.4e} at epoch {}", b.val_mse, b.epoch);
            }
        }
        Command::Hpo { train } => {
            let log = read_log(train.as_ref(), out, "train.csv")?;
            let p = prepare(&cfg, &log)?;
            let r = search_hyperparameters(&cfg, &p, Some(&out.join("hpo")))?;
            save_checkpoint(
                &out.join("best.json"),
                &r.best_model,
                r.best.seed,
                serde_json::to_value(&r.best.config)?,
                None,
            )?;
            info!(
                "best trial {} ({} epochs consumed over {} trials)",
                r.best.id,
                r.consumed_epochs(),
                r.trials.len()
            );
        }
        Command::Eval {
            checkpoint,
            reference,
            test,
        } => {
            let model = read_model(checkpoint.as_ref(), out)?;
            let reference = reference
                .as_ref()
                .map(|p| read_model(Some(p), out))
                .transpose()?;
            let log = read_log(test.as_ref(), out, "test.csv")?;
            let report = evaluate_model(&cfg, &model, reference.as_ref(), &log)?;
            report.write_json(&out.join("eval.json"))?;
            report.write_horizon_csv(File::create(out.join("horizon.csv"))?)?;
            let long = eval_long_prediction(&model, &log, cfg.eval.warmup_s)?;
            let mut w = csv::Writer::from_path(out.join("long_prediction.csv"))?;
            let n = long.predicted.ncols();
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|j| format!("q{j}")));
            header.extend((1..=n).map(|j| format!("q{j}_pred")));
            w.write_record(&header)?;
            for (k, pred) in long.predicted.rows().into_iter().enumerate() {
                let r = long.start + k;
                let mut row = vec![log.t[r].to_string()];
                row.extend(log.q.row(r).iter().map(f64::to_string));
                row.extend(pred.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
            w.flush()?;
            info!("mean long-horizon RMSE {:.3}°", report.mean_rmse);
        }
        Command::Control {
            controller,
            checkpoint,
        } => {
            let (kind, stem) = match controller {
                ControllerArg::Nmpc => (ControllerKind::Nmpc, "nmpc"),
                ControllerArg::Pi => (ControllerKind::Pi, "pi"),
            };
            let model = match kind {
                ControllerKind::Nmpc => Some(read_model(checkpoint.as_ref(), out)?),
                ControllerKind::Pi => None,
            };
            let ck = checkpoint
                .clone()
                .unwrap_or_else(|| out.join("model.json"))
                .to_string_lossy()
                .into_owned();
            let log = run_control(
                &cfg,
                kind,
                model.as_ref(),
                model.as_ref().map(|_| ck.as_str()),
            )?;
            log.save(out, stem)?;
            let mut report = tracking_report(&log)?;
            report.horizon.clear();
            report.write_json(&out.join(format!("{stem}_eval.json")))?;
            write_json(&out.join(format!("{stem}_timing.json")), &timing(&log))?;
            info!(
                "{stem}: mean tracking RMSE {:.3}° {:?}",
                report.mean_rmse, report.per_joint_rmse
            );
        }
        Command::Replay { log, checkpoint } => {
            let original = TrajectoryLog::load(log)?;
            let ck = checkpoint
                .clone()
                .or_else(|| original.meta.checkpoint.as_ref().map(PathBuf::from));
            let model = ck.as_ref().map(|p| read_model(Some(p), out)).transpose()?;
            let again = replay(&original.meta, model.as_ref())?;
            again.save(out, "replay")?;
            if again.same_run(&original) {
                info!("replay is bit-identical ({} records)", again.records.len());
            } else {
                bail!("replay differs from {}", log.display());
            }
        }
    }
    Ok(())
}

fn timing(log: &TrajectoryLog) -> serde_json::Value {
    let t = &log.solve_times;
    if t.is_empty() {
        return serde_json::json!({ "cycles": 0 });
    }
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let max = t.iter().copied().fold(0.0, f64::max);
    serde_json::json!({ "cycles": t.len(), "mean_solve_s": mean, "max_solve_s": max })
}
