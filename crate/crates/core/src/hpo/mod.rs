//! Random-search hyperparameter optimization with ASHA early stopping.

pub mod asha;
pub mod report;
pub mod runner;
pub mod space;

pub use asha::{
    asha_decide, in_top_fraction, verify_log, AshaConfig, Decision, Event, EventLog, HpoTrial,
    LoggedEvent, RungTable, TrialStatus,
};
pub use report::{
    export_trials_report, parse_trials_report, read_trials_report, write_trials_report, ReportRow,
    REPORT_COLUMNS,
};
pub use runner::{run_hpo, trial_arch, trial_seed, trial_spec, HpoOptions, HpoResult, Schedule};
pub use space::{sample_config, SearchSpace, TrialConfig};
