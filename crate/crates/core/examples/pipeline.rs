//! Collects data, trains a model and tracks a reference with NMPC and PI.
//!
//! `cargo run --release --example pipeline -- [config.toml]`

use std::time::Instant;

use rnnmpc_core::runtime::{
    collect_datasets, evaluate_model, prepare, run_control, tracking_report, train_model, Config,
    ControllerKind,
};

fn main() -> rnnmpc_core::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => Config::load(p.as_ref())?,
        None => Config::default(),
    };
    let t0 = Instant::now();
    let data = collect_datasets(&cfg)?;
    println!("collected in {:.1?}", t0.elapsed());
    let prepared = prepare(&cfg, &data.train)?;
    let (model, hist) = train_model(&cfg, &prepared)?;
    println!(
        "trained {} epochs in {:.1?}, best val mse {:.3e}",
        hist.epochs.len(),
        t0.elapsed(),
        hist.best().map_or(f64::NAN, |e| e.val_mse)
    );
    let report = evaluate_model(&cfg, &model, None, &data.test)?;
    println!(
        "long rmse {:?} std {:?}",
        report.per_joint_rmse, report.per_joint_std
    );
    for c in &report.horizon {
        println!("{:>12} {:?}", c.name, c.per_step);
    }
    for kind in [ControllerKind::Pi, ControllerKind::Nmpc] {
        let log = run_control(&cfg, kind, Some(&model), None)?;
        let r = tracking_report(&log)?;
        let fallbacks = log.records.iter().filter(|r| r.fallback).count();
        println!(
            "{kind:?}: rmse {:.3} {:?} fallbacks {fallbacks} at {:.1?}",
            r.mean_rmse,
            r.per_joint_rmse,
            t0.elapsed()
        );
    }
    Ok(())
}
