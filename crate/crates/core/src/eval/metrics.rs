use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::RunRecord;
use crate::data::CorruptionRecord;
use crate::error::{Error, Result};

/// Number of final epochs averaged into LAST.
pub const LAST_WINDOW: usize = 5;

/// `(BEST, LAST)` of a test-accuracy series: the maximum, and the mean of
/// the final [`LAST_WINDOW`] values.
pub fn best_last_series(test_acc: &[f64]) -> Result<(f64, f64)> {
    if test_acc.len() < LAST_WINDOW {
        return Err(Error::invalid(format!(
            "BEST/LAST needs at least {LAST_WINDOW} epochs, got {}",
            test_acc.len()
        )));
    }
    let best = test_acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail = &test_acc[test_acc.len() - LAST_WINDOW..];
    let last = tail.iter().sum::<f64>() / LAST_WINDOW as f64;
    Ok((best, last))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub method: String,
    pub pretext: String,
    pub p: f64,
    pub seed: u64,
    pub best: f64,
    pub last: f64,
}

pub fn best_last(record: &RunRecord) -> Result<TrialSummary> {
    let acc: Vec<f64> = record.epochs.iter().map(|e| e.test_acc).collect();
    let (best, last) = best_last_series(&acc)?;
    Ok(TrialSummary {
        method: record.meta.method.clone(),
        pretext: record.meta.pretext.clone(),
        p: record.meta.noise_rate,
        seed: record.meta.seed,
        best,
        last,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Memorization {
    /// Fraction of corrupted samples predicted as their observed label.
    pub rate: f64,
    /// Fraction of corrupted samples predicted as their clean label.
    pub clean_rate: f64,
    /// Set when the split has no corrupted samples; both rates are then 0.
    pub no_corrupted: bool,
}

pub fn memorization_rate(predictions: &[usize], records: &[CorruptionRecord]) -> Result<Memorization> {
    if predictions.len() != records.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    let (mut corrupted, mut memorized, mut recovered) = (0usize, 0usize, 0usize);
    for (&p, r) in predictions.iter().zip(records) {
        if r.is_corrupted {
            corrupted += 1;
            memorized += usize::from(p == r.observed_label);
            recovered += usize::from(p == r.clean_label);
        }
    }
    if corrupted == 0 {
        return Ok(Memorization {
            rate: 0.0,
            clean_rate: 0.0,
            no_corrupted: true,
        });
    }
    Ok(Memorization {
        rate: memorized as f64 / corrupted as f64,
        clean_rate: recovered as f64 / corrupted as f64,
        no_corrupted: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub selected_count: usize,
    /// `None` when nothing was selected.
    pub precision: Option<f64>,
    /// `None` when the split has no clean samples.
    pub recall: Option<f64>,
    /// Selected counts by observed class.
    pub per_class_selected: Vec<usize>,
}

pub fn selection_metrics(mask: &[bool], records: &[CorruptionRecord], num_classes: usize) -> Result<SelectionMetrics> {
    if mask.len() != records.len() {
        return Err(Error::invalid(format!("mask of {} for {} records", mask.len(), records.len())));
    }
    let mut per_class = vec![0usize; num_classes];
    let (mut selected, mut selected_clean, mut clean) = (0usize, 0usize, 0usize);
    for (&m, r) in mask.iter().zip(records) {
        clean += usize::from(!r.is_corrupted);
        if m {
            selected += 1;
            selected_clean += usize::from(!r.is_corrupted);
            if r.observed_label >= num_classes {
                return Err(Error::invalid(format!("observed label {} out of range", r.observed_label)));
            }
            per_class[r.observed_label] += 1;
        }
    }
    Ok(SelectionMetrics {
        selected_count: selected,
        precision: (selected > 0).then(|| selected_clean as f64 / selected as f64),
        recall: (clean > 0).then(|| selected_clean as f64 / clean as f64),
        per_class_selected: per_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub pretext: String,
    pub p: f64,
    pub best_mean: f64,
    pub best_std: f64,
    pub last_mean: f64,
    pub last_std: f64,
    pub trials: usize,
}

impl AggregateRow {
    /// A single trial has no spread; its std is reported as 0.
    pub fn single_trial(&self) -> bool {
        self.trials == 1
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Group by `(method, pretext, p)` and report sample mean and the
/// `n - 1` standard deviation. Groups come out sorted by key.
pub fn aggregate_trials(summaries: &[TrialSummary]) -> Result<Vec<AggregateRow>> {
    if summaries.is_empty() {
        return Err(Error::invalid("no trials to aggregate"));
    }
    let mut groups: BTreeMap<(String, String, u64), Vec<&TrialSummary>> = BTreeMap::new();
    for s in summaries {
        groups
            .entry((s.method.clone(), s.pretext.clone(), s.p.to_bits()))
            .or_default()
            .push(s);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_values()
        .map(|g| {
            let best: Vec<f64> = g.iter().map(|s| s.best).collect();
            let last: Vec<f64> = g.iter().map(|s| s.last).collect();
            let (best_mean, best_std) = mean_std(&best);
            let (last_mean, last_std) = mean_std(&last);
            AggregateRow {
                method: g[0].method.clone(),
                pretext: g[0].pretext.clone(),
                p: g[0].p,
                best_mean,
                best_std,
                last_mean,
                last_std,
                trials: g.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.method, &a.pretext)
            .cmp(&(&b.method, &b.pretext))
            .then(a.p.total_cmp(&b.p))
    });
    Ok(rows)
}
