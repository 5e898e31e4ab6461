use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::{CorruptionRecord, DatasetSplit};
use crate::error::{Error, Result};
use crate::seed;

/// Name a split must not carry to be eligible for corruption.
pub const TEST_SPLIT_NAME: &str = "test";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub noise_rate: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(noise_rate: f64, num_classes: usize, seed: u64) -> Result<Self> {
        let spec = NoiseSpec {
            noise_rate,
            num_classes,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::invalid(format!("noise rate {} outside [0, 1]", self.noise_rate)));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        Ok(())
    }
}

/// Row-stochastic `K x K` matrix of `P(observed = j | clean = i)` for
/// symmetric noise: `1 - p` on the diagonal, `p / (K - 1)` elsewhere.
pub fn transition_matrix(spec: &NoiseSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let k = spec.num_classes;
    let off = spec.noise_rate / (k - 1) as f64;
    Ok(Array2::from_shape_fn((k, k), |(i, j)| if i == j { 1.0 - spec.noise_rate } else { off }))
}

/// Observed label for one sample; the draw depends only on `(seed, id)`.
pub fn corrupt_label(clean: usize, id: u64, spec: &NoiseSpec) -> usize {
    let mut rng = seed::rng(seed::derive_indexed(spec.seed, "label-noise", id));
    let u: f64 = rng.random();
    if u < spec.noise_rate {
        let r = rng.random_range(0..spec.num_classes - 1);
        if r >= clean {
            r + 1
        } else {
            r
        }
    } else {
        clean
    }
}

/// Flip each sample's label with probability `p` to a uniformly chosen
/// different class. Clean labels are kept in the records for evaluation.
pub fn inject_symmetric_noise(split: &DatasetSplit, spec: &NoiseSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    if split.name() == TEST_SPLIT_NAME {
        return Err(Error::invalid("refusing to inject label noise into the test split"));
    }
    if spec.num_classes != split.num_classes() {
        return Err(Error::invalid(format!(
            "noise spec has {} classes but split `{}` has {}",
            spec.num_classes,
            split.name(),
            split.num_classes()
        )));
    }
    let records = split
        .images()
        .iter()
        .map(|s| CorruptionRecord::new(s.id, s.clean_label, corrupt_label(s.clean_label, s.id, spec)))
        .collect();
    DatasetSplit::from_parts(split.name(), split.num_classes(), split.shared_images(), records)
}

/// One line of the split export file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLine {
    pub id: u64,
    pub clean_label: usize,
    pub observed_label: usize,
    pub is_corrupted: bool,
    pub path: String,
}

pub fn export_records(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (img, rec) in split.images().iter().zip(split.records()) {
        let line = RecordLine {
            id: rec.id,
            clean_label: rec.clean_label,
            observed_label: rec.observed_label,
            is_corrupted: rec.is_corrupted,
            path: img.source.as_record_path(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn import_records(path: impl AsRef<Path>) -> Result<Vec<RecordLine>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::Serde(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Re-apply a previously exported noise realization to `split`.
pub fn apply_records(split: &DatasetSplit, lines: &[RecordLine]) -> Result<DatasetSplit> {
    let by_id: HashMap<u64, &RecordLine> = lines.iter().map(|l| (l.id, l)).collect();
    let mut records = Vec::with_capacity(split.len());
    for img in split.images() {
        let line = by_id
            .get(&img.id)
            .ok_or_else(|| Error::Dataset(format!("no record for sample id {}", img.id)))?;
        if line.clean_label != img.clean_label {
            return Err(Error::Dataset(format!(
                "record for sample {} has clean label {} but the split has {}",
                img.id, line.clean_label, img.clean_label
            )));
        }
        records.push(CorruptionRecord::new(img.id, img.clean_label, line.observed_label));
    }
    DatasetSplit::from_parts(split.name(), split.num_classes(), split.shared_images(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_dataset, SyntheticSpec};

    fn split(n: usize, k: usize) -> DatasetSplit {
        make_synthetic_dataset(&SyntheticSpec::new(k, n, (4, 4), 1)).unwrap()
    }

    #[test]
    fn zero_rate_keeps_all_labels() {
        let s = split(20, 3);
        let noisy = inject_symmetric_noise(&s, &NoiseSpec::new(0.0, 3, 5).unwrap()).unwrap();
        assert!(noisy.records().iter().all(|r| !r.is_corrupted && r.observed_label == r.clean_label));
    }

    #[test]
    fn unit_rate_flips_every_label() {
        let s = split(20, 3);
        let noisy = inject_symmetric_noise(&s, &NoiseSpec::new(1.0, 3, 5).unwrap()).unwrap();
        assert!(noisy.records().iter().all(|r| r.is_corrupted && r.observed_label != r.clean_label));
    }

    #[test]
    fn class_mismatch_and_test_split_are_rejected() {
        let s = split(5, 3);
        assert!(inject_symmetric_noise(&s, &NoiseSpec::new(0.5, 4, 0).unwrap()).is_err());
        let t = s.renamed(TEST_SPLIT_NAME);
        assert!(inject_symmetric_noise(&t, &NoiseSpec::new(0.5, 3, 0).unwrap()).is_err());
        assert!(NoiseSpec::new(1.5, 3, 0).is_err());
        assert!(NoiseSpec::new(0.5, 1, 0).is_err());
    }

    #[test]
    fn transition_matrix_examples() {
        let t = transition_matrix(&NoiseSpec::new(0.6, 3, 0).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.4 } else { 0.3 };
                assert!((t[[i, j]] - want).abs() < 1e-15);
            }
        }
        let id = transition_matrix(&NoiseSpec::new(0.0, 4, 0).unwrap()).unwrap();
        assert_eq!(id, Array2::<f64>::eye(4));
    }

    #[test]
    fn corruption_is_keyed_by_id_not_position() {
        let s = split(30, 4);
        let spec = NoiseSpec::new(0.5, 4, 77).unwrap();
        let noisy = inject_symmetric_noise(&s, &spec).unwrap();
        let mut reversed: Vec<_> = s.images().to_vec();
        reversed.reverse();
        let rs = DatasetSplit::new("train", 4, reversed).unwrap();
        let noisy_rev = inject_symmetric_noise(&rs, &spec).unwrap();
        for r in noisy.records() {
            let other = noisy_rev.records().iter().find(|o| o.id == r.id).unwrap();
            assert_eq!(r, other);
        }
    }

    #[test]
    fn records_roundtrip_through_jsonl() {
        let s = split(12, 3);
        let noisy = inject_symmetric_noise(&s, &NoiseSpec::new(0.7, 3, 2).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        export_records(&noisy, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["id", "clean_label", "observed_label", "is_corrupted", "path"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(first["path"], "synthetic");
        let lines = import_records(&path).unwrap();
        let again = apply_records(&s, &lines).unwrap();
        assert_eq!(again.records(), noisy.records());
    }
}
