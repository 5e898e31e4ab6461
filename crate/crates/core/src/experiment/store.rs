use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_trials, read_summaries_csv, write_aggregates_csv, write_summaries_csv, AggregateRow, RunRecord,
    TrialSummary,
};

pub const SUMMARIES_FILE: &str = "summaries.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Index of every artifact in a results directory and the config hash
/// that produced it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative artifact path -> config hash.
    pub artifacts: BTreeMap<String, String>,
}

/// Directory layout:
///
/// ```text
/// <root>/manifest.json
/// <root>/configs/<hash>.toml
/// <root>/checkpoints/<pretext>/t<trial>-net<k>.ckpt   (none/MARKER for default init)
/// <root>/runs/<method>-<pretext>-p<rate>-t<trial>/record.jsonl + meta.json
/// <root>/summaries.csv, aggregates.csv
/// <root>/plots/<figure>.{svg,png,csv}
/// ```
pub struct ResultsStore {
    root: PathBuf,
    hash: String,
}

impl ResultsStore {
    /// Create the directory and echo `cfg` into `configs/<hash>.toml`.
    pub fn open(root: impl Into<PathBuf>, cfg: &ExperimentConfig) -> Result<Self> {
        let store = ResultsStore {
            root: root.into(),
            hash: cfg.hash(),
        };
        store.ensure_dir(&store.root)?;
        let rel = format!("configs/{}.toml", store.hash);
        let text = format!("# config hash {}\n{}", store.hash, cfg.to_toml_string()?);
        store.write_text(&rel, &text)?;
        Ok(store)
    }

    /// Read-only access for plotting and reporting.
    pub fn existing(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::Config(format!("results directory {} does not exist", root.display())));
        }
        Ok(ResultsStore {
            root,
            hash: String::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn ensure_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.path(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Register `rel` under this store's config hash.
    pub fn record_artifact(&self, rel: &str) -> Result<()> {
        let mut manifest = self.manifest()?;
        manifest.artifacts.insert(rel.to_string(), self.hash.clone());
        let path = self.path(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Write a text artifact (creating parents) and register it.
    pub fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.record_artifact(rel)?;
        Ok(path)
    }

    pub fn checkpoint_rel(pretext: &str, trial: usize, net: usize) -> String {
        format!("checkpoints/{pretext}/t{trial}-net{net}.ckpt")
    }

    pub fn marker_rel(pretext: &str) -> String {
        format!("checkpoints/{pretext}/MARKER")
    }

    /// Prepare the parent directory of an artifact written by other code.
    pub fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        Ok(path)
    }

    pub fn run_dir_name(method: &str, pretext: &str, p: f64, trial: usize) -> String {
        format!("runs/{method}-{pretext}-p{p:.2}-t{trial}")
    }

    pub fn write_run(&self, record: &RunRecord, trial: usize) -> Result<PathBuf> {
        let meta = &record.meta;
        let dir = Self::run_dir_name(&meta.method, &meta.pretext, meta.noise_rate, trial);
        let rec_rel = format!("{dir}/record.jsonl");
        let path = self.prepare(&rec_rel)?;
        record.write_jsonl(&path)?;
        self.record_artifact(&rec_rel)?;
        #[derive(Serialize)]
        struct RunMetaFile<'a> {
            #[serde(flatten)]
            meta: &'a crate::eval::RunMeta,
            trial: usize,
            config_hash: &'a str,
        }
        let meta_text = serde_json::to_string_pretty(&RunMetaFile {
            meta,
            trial,
            config_hash: &self.hash,
        })?;
        self.write_text(&format!("{dir}/meta.json"), &(meta_text + "\n"))?;
        Ok(path)
    }

    pub fn summaries(&self) -> Result<Vec<TrialSummary>> {
        let path = self.path(SUMMARIES_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_summaries_csv(path)
    }

    /// Merge `rows` into `summaries.csv` (rows with the same method,
    /// pretext, noise rate and seed are replaced), rewrite the aggregates
    /// and return them.
    pub fn merge_summaries(&self, rows: &[TrialSummary]) -> Result<Vec<AggregateRow>> {
        let mut merged: BTreeMap<(String, String, u64, u64), TrialSummary> = BTreeMap::new();
        for row in self.summaries()?.into_iter().chain(rows.iter().cloned()) {
            merged.insert((row.method.clone(), row.pretext.clone(), row.p.to_bits(), row.seed), row);
        }
        let all: Vec<TrialSummary> = merged.into_values().collect();
        write_summaries_csv(&all, self.path(SUMMARIES_FILE))?;
        self.record_artifact(SUMMARIES_FILE)?;
        let aggregates = aggregate_trials(&all)?;
        write_aggregates_csv(&aggregates, self.path(AGGREGATES_FILE))?;
        self.record_artifact(AGGREGATES_FILE)?;
        Ok(aggregates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, p: f64, seed: u64, last: f64) -> TrialSummary {
        TrialSummary {
            method: method.into(),
            pretext: "none".into(),
            p,
            seed,
            best: last + 0.1,
            last,
        }
    }

    #[test]
    fn merge_replaces_matching_rows() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(dir.path(), &ExperimentConfig::default()).unwrap();
        store.merge_summaries(&[row("ce", 0.5, 1, 0.5), row("ce", 0.5, 2, 0.7)]).unwrap();
        let agg = store.merge_summaries(&[row("ce", 0.5, 2, 0.6), row("coteaching", 0.5, 1, 0.8)]).unwrap();
        let all = store.summaries().unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(agg.len(), 2);
        assert!((agg[0].last_mean - 0.55).abs() < 1e-12);
        let manifest = store.manifest().unwrap();
        assert_eq!(manifest.artifacts[SUMMARIES_FILE], store.config_hash());
        assert!(manifest.artifacts.keys().any(|k| k.starts_with("configs/")));
    }
}
