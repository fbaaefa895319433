//! Trace checking, communication metrics and experiment drivers.

pub mod aba_trial;
pub mod checks;
pub mod experiment;
pub mod metrics;

pub use self::aba_trial::{run_aba_trial, AbaTrial};
pub use self::checks::{check_lemmas, CheckError, Flag, LemmaReport};
pub use self::experiment::{
    run_and_check, run_sweep, trace_dir, write_outputs, CellResult, ExperimentError, RunOptions,
    RunRecord, SweepFile, SweepReport, TRACE_DIR_ENV,
};
pub use self::metrics::{
    all_byzantine_bound, all_byzantine_exact, baseline_bytes, expected_phase_bytes, loglog_slope,
    MetricsReport, Phase,
};
