//! Experiment orchestration: config files, the pretrain -> noisy retrain
//! pipeline, the results store, plots and reports.

mod config;
mod pipeline;
mod plot;
mod store;

pub use config::{
    CoteachingSection, DatasetConfig, DivideMixSection, ExperimentConfig, LnlMethod, PretrainSection, RetrainSection,
};
pub use pipeline::{cmd_pretrain, cmd_train, load_dataset, SeedPlan, TrainReport};
pub use plot::{cmd_plot, figure_data, read_sidecar, render_svg, svg_to_png, write_sidecar, Figure, PlotOutput, PlotPoint};
pub use store::{Manifest, ResultsStore, AGGREGATES_FILE, MANIFEST_FILE, SUMMARIES_FILE};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{aggregate_trials, write_aggregates_csv};

/// Recompute `aggregates.csv` from `summaries.csv` and return a
/// plain-text table of mean +- std per (method, pretext, p).
pub fn cmd_report(results_dir: impl AsRef<Path>) -> Result<String> {
    let store = ResultsStore::existing(results_dir.as_ref())?;
    let summaries = store.summaries()?;
    if summaries.is_empty() {
        return Err(Error::Config(format!(
            "{} has no summaries; run `noisy-ssl train` first",
            store.root().display()
        )));
    }
    let rows = aggregate_trials(&summaries)?;
    write_aggregates_csv(&rows, store.path(AGGREGATES_FILE))?;
    let mut out = format!(
        "{:<12} {:<12} {:>5} {:>17} {:>17} {:>6}\n",
        "method", "pretext", "p", "BEST", "LAST", "trials"
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>5.2} {:>8.4} +- {:<6.4} {:>8.4} +- {:<6.4} {:>3}{}",
            r.method,
            r.pretext,
            r.p,
            r.best_mean,
            r.best_std,
            r.last_mean,
            r.last_std,
            r.trials,
            if r.single_trial() { " (single trial)" } else { "" }
        );
    }
    Ok(out)
}
