use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

/// Where a sample's pixels came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Synthetic,
    File(PathBuf),
}

impl Source {
    pub fn as_record_path(&self) -> String {
        match self {
            Source::Synthetic => "synthetic".to_string(),
            Source::File(p) => p.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: u64,
    pub image: Image,
    pub clean_label: usize,
    pub source: Source,
}

/// Ground-truth bookkeeping for one sample's observed label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub id: u64,
    pub clean_label: usize,
    pub observed_label: usize,
    pub is_corrupted: bool,
}

impl CorruptionRecord {
    pub fn identity(id: u64, label: usize) -> Self {
        CorruptionRecord {
            id,
            clean_label: label,
            observed_label: label,
            is_corrupted: false,
        }
    }

    pub fn new(id: u64, clean_label: usize, observed_label: usize) -> Self {
        CorruptionRecord {
            id,
            clean_label,
            observed_label,
            is_corrupted: clean_label != observed_label,
        }
    }
}

/// An ordered collection of images with one corruption record each.
///
/// Images are shared behind an `Arc`, so re-labelled copies of a split
/// (different noise realizations) do not duplicate pixel data.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    name: String,
    num_classes: usize,
    images: Arc<[LabeledImage]>,
    records: Vec<CorruptionRecord>,
}

impl DatasetSplit {
    /// Clean split: every record is the identity record.
    pub fn new(name: impl Into<String>, num_classes: usize, images: Vec<LabeledImage>) -> Result<Self> {
        let records = images
            .iter()
            .map(|img| CorruptionRecord::identity(img.id, img.clean_label))
            .collect();
        Self::from_parts(name, num_classes, images.into(), records)
    }

    pub fn from_parts(
        name: impl Into<String>,
        num_classes: usize,
        images: Arc<[LabeledImage]>,
        records: Vec<CorruptionRecord>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Dataset(format!("need at least 2 classes, got {num_classes}")));
        }
        if images.len() != records.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} corruption records",
                images.len(),
                records.len()
            )));
        }
        let mut ids = HashSet::with_capacity(images.len());
        for (img, rec) in images.iter().zip(&records) {
            if !ids.insert(img.id) {
                return Err(Error::Dataset(format!("duplicate sample id {}", img.id)));
            }
            if rec.id != img.id {
                return Err(Error::Dataset(format!("record id {} does not match image id {}", rec.id, img.id)));
            }
            if img.clean_label >= num_classes || rec.observed_label >= num_classes {
                return Err(Error::Dataset(format!("label out of range for sample {}", img.id)));
            }
            if rec.clean_label != img.clean_label {
                return Err(Error::Dataset(format!("record clean label disagrees with image {}", img.id)));
            }
            if rec.is_corrupted != (rec.observed_label != rec.clean_label) {
                return Err(Error::Dataset(format!("inconsistent corruption flag for sample {}", img.id)));
            }
            if !img.image.in_unit_range() {
                return Err(Error::Dataset(format!("intensities outside [0,1] in sample {}", img.id)));
            }
        }
        Ok(DatasetSplit {
            name: name.into(),
            num_classes,
            images,
            records,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[LabeledImage] {
        &self.images
    }

    pub fn shared_images(&self) -> Arc<[LabeledImage]> {
        Arc::clone(&self.images)
    }

    pub fn records(&self) -> &[CorruptionRecord] {
        &self.records
    }

    pub fn pixels(&self) -> Vec<&Image> {
        self.images.iter().map(|s| &s.image).collect()
    }

    pub fn clean_labels(&self) -> Vec<usize> {
        self.images.iter().map(|s| s.clean_label).collect()
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.observed_label).collect()
    }

    pub fn corrupted_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_corrupted).count()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Trainer-facing view exposing pixels and observed labels only.
    pub fn trainer_view(&self) -> TrainerView<'_> {
        TrainerView { split: self }
    }
}

/// Read-only access to a split that cannot reach clean labels or
/// corruption flags.
#[derive(Clone, Copy, Debug)]
pub struct TrainerView<'a> {
    split: &'a DatasetSplit,
}

impl<'a> TrainerView<'a> {
    pub fn len(&self) -> usize {
        self.split.len()
    }

    pub fn is_empty(&self) -> bool {
        self.split.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.split.num_classes
    }

    pub fn image(&self, i: usize) -> &'a Image {
        &self.split.images[i].image
    }

    pub fn images(&self, indices: &[usize]) -> Vec<&'a Image> {
        indices.iter().map(|&i| self.image(i)).collect()
    }

    pub fn all_images(&self) -> Vec<&'a Image> {
        self.split.images.iter().map(|s| &s.image).collect()
    }

    pub fn observed_label(&self, i: usize) -> usize {
        self.split.records[i].observed_label
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.split.observed_labels()
    }

    pub fn id(&self, i: usize) -> u64 {
        self.split.images[i].id
    }
}
