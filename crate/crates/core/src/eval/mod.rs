//! BEST/LAST accuracy, memorization rate, selection quality and trial
//! aggregation, plus the per-epoch monitor used by every trainer.

mod metrics;
mod monitor;
mod record;

pub use metrics::{
    aggregate_trials, best_last, best_last_series, memorization_rate, selection_metrics, AggregateRow, Memorization,
    SelectionMetrics, TrialSummary, LAST_WINDOW,
};
pub use monitor::Monitor;
pub use record::{
    read_aggregates_csv, read_summaries_csv, write_aggregates_csv, write_summaries_csv, EpochMetrics, GmmSummary,
    RunMeta, RunRecord,
};
