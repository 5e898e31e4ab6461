use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{AggregateRow, TrialSummary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmSummary {
    pub means: [f64; 2],
    pub weights: [f64; 2],
}

/// One row of a run's JSON-lines trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc_observed: f64,
    pub test_acc: f64,
    pub memorization_rate: f64,
    pub selected_count: Option<usize>,
    pub selection_precision: Option<f64>,
    pub selection_recall: Option<f64>,
    pub per_class_selected: Option<Vec<usize>>,
    pub gmm: Option<GmmSummary>,
    /// Accuracy of corrupted samples against their clean labels.
    pub corrupted_clean_acc: f64,
    /// Test accuracy of the second network for dual-network methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_test_acc: Option<f64>,
    /// Test accuracy of the averaged softmax of both networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: String,
    pub pretext: String,
    pub noise_rate: f64,
    pub seed: u64,
    pub dataset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub epochs: Vec<EpochMetrics>,
}

impl RunRecord {
    pub fn new(meta: RunMeta, epochs: Vec<EpochMetrics>) -> Result<Self> {
        let record = RunRecord { meta, epochs };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.epochs.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(Error::invalid("epochs must be strictly increasing"));
            }
        }
        for e in &self.epochs {
            if !(0.0..=1.0).contains(&e.test_acc) || !(0.0..=1.0).contains(&e.train_acc_observed) {
                return Err(Error::invalid(format!("accuracy outside [0,1] at epoch {}", e.epoch)));
            }
        }
        Ok(())
    }

    pub fn test_acc(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.test_acc).collect()
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(meta: RunMeta, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut epochs = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                epochs.push(serde_json::from_str(&line)?);
            }
        }
        Self::new(meta, epochs)
    }
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Dataset(format!("cannot read {}: {e}", path.display())),
        _ => Error::from(e),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Columns `method,pretext,p,seed,best,last`.
pub fn write_summaries_csv(rows: &[TrialSummary], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, path.as_ref())
}

pub fn read_summaries_csv(path: impl AsRef<Path>) -> Result<Vec<TrialSummary>> {
    read_csv(path.as_ref())
}

/// Columns `method,pretext,p,best_mean,best_std,last_mean,last_std,trials`.
pub fn write_aggregates_csv(rows: &[AggregateRow], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, path.as_ref())
}

pub fn read_aggregates_csv(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    read_csv(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, acc: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            train_acc_observed: acc,
            test_acc: acc,
            memorization_rate: 0.0,
            selected_count: None,
            selection_precision: None,
            selection_recall: None,
            per_class_selected: None,
            gmm: None,
            corrupted_clean_acc: 0.0,
            peer_test_acc: None,
            ensemble_test_acc: None,
        }
    }

    fn meta() -> RunMeta {
        RunMeta {
            method: "ce".into(),
            pretext: "none".into(),
            noise_rate: 0.5,
            seed: 1,
            dataset: "synthetic".into(),
        }
    }

    #[test]
    fn jsonl_fields_and_roundtrip() {
        let rec = RunRecord::new(meta(), vec![row(0, 0.3), row(1, 0.4)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        rec.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in [
            "epoch",
            "train_acc_observed",
            "test_acc",
            "memorization_rate",
            "selected_count",
            "selection_precision",
            "selection_recall",
            "per_class_selected",
            "gmm",
        ] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(RunRecord::read_jsonl(meta(), &path).unwrap(), rec);
        assert!(RunRecord::new(meta(), vec![row(1, 0.3), row(1, 0.4)]).is_err());
        assert!(RunRecord::new(meta(), vec![row(0, 1.3)]).is_err());
    }

    #[test]
    fn csv_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = TrialSummary {
            method: "ce".into(),
            pretext: "none".into(),
            p: 0.5,
            seed: 3,
            best: 0.9,
            last: 0.8,
        };
        write_summaries_csv(&[s.clone()], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "method,pretext,p,seed,best,last");
        assert_eq!(read_summaries_csv(&path).unwrap(), vec![s.clone()]);
        let agg = crate::eval::aggregate_trials(&[s]).unwrap();
        let apath = dir.path().join("a.csv");
        write_aggregates_csv(&agg, &apath).unwrap();
        let text = std::fs::read_to_string(&apath).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "method,pretext,p,best_mean,best_std,last_mean,last_std,trials"
        );
        assert_eq!(read_aggregates_csv(&apath).unwrap(), agg);
    }
}
