//! Experiment harness: data collection, references, closed-loop runs, PI
//! baseline, evaluation protocols and the configuration-driven pipeline.

pub mod closed_loop;
pub mod collect;
pub mod eval;
pub mod experiment;
pub mod pi;
pub mod reference;
pub mod trajectory;

pub use closed_loop::{run_closed_loop, Controller, LoopOptions};
pub use collect::{collect, CollectOptions};
pub use eval::{
    eval_horizon_ablation, eval_long_prediction, probe_indices, EvalReport, HorizonCurve,
    LongPrediction, Variant,
};
pub use experiment::{
    collect_datasets, collect_test_log, collect_train_log, evaluate_model, fit_model_scaler,
    prepare, replay, run_control, search_hyperparameters, tracking_report, train_model,
    train_reference_model, Config, ControllerKind, Datasets, Prepared,
};
pub use pi::{pi_step, PiGains, PiState};
pub use reference::{gen_reference, gen_reference_with, Reference, ReferenceParams};
pub use trajectory::{compute_rmse, CycleRecord, Phase, RunMetadata, TrajectoryLog};

/// Independent seed for item `k` of the stream `seed` (SplitMix64 finalizer).
pub fn stream_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
