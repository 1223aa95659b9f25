//! Evaluation against simulator ground truth and seeded trial sweeps.

mod evaluate;
mod metrics;
mod sweep;

pub use evaluate::{
    align_errors, evaluate, write_errors_csv, Comparison, ErrorSample, LabeledReport, MetricsReport, ERROR_COLUMNS,
    REPORT_SCHEMA_VERSION,
};
pub use metrics::{euler_error, quantile_sorted, rmse, FiveNumber};
pub use sweep::{
    run_sweep, run_trial, selection_matches, trial_seed, write_csv, Cell, CellSummary, DatasetOverrides, SweepConfig,
    SweepReport, TrialOutcome,
};
