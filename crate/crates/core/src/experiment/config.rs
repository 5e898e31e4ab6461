use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lnl::{CoteachingConfig, DivideMixConfig, TrainConfig};
use crate::model::EncoderConfig;
use crate::pretext::{AugmentationPipeline, PretextConfig, PretextKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LnlMethod {
    Ce,
    Coteaching,
    Dividemix,
}

impl LnlMethod {
    pub fn name(self) -> &'static str {
        match self {
            LnlMethod::Ce => "ce",
            LnlMethod::Coteaching => "coteaching",
            LnlMethod::Dividemix => "dividemix",
        }
    }

    pub fn dual(self) -> bool {
        self != LnlMethod::Ce
    }
}

impl fmt::Display for LnlMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LnlMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" | "cross_entropy" => Ok(LnlMethod::Ce),
            "coteaching" | "co-teaching" | "ct" => Ok(LnlMethod::Coteaching),
            "dividemix" | "dm" => Ok(LnlMethod::Dividemix),
            other => Err(Error::Config(format!(
                "unknown LNL method `{other}` (expected ce, coteaching or dividemix)"
            ))),
        }
    }
}

/// Where the images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic {
        num_classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        height: usize,
        width: usize,
        #[serde(default = "one")]
        channels: usize,
        /// Fixes the class templates; the master seed does not change them.
        #[serde(default)]
        template_seed: u64,
    },
    /// `train_dir/<class>/*.png` and `test_dir/<class>/*.png`.
    Folder {
        train_dir: PathBuf,
        test_dir: PathBuf,
        height: usize,
        width: usize,
        #[serde(default = "one")]
        channels: usize,
        /// Defaults to the sorted subdirectory names of `train_dir`.
        #[serde(default)]
        classes: Option<Vec<String>>,
    },
}

fn one() -> usize {
    1
}

impl DatasetConfig {
    pub fn image_shape(&self) -> (usize, usize, usize) {
        match *self {
            DatasetConfig::Synthetic {
                height, width, channels, ..
            }
            | DatasetConfig::Folder {
                height, width, channels, ..
            } => (height, width, channels),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DatasetConfig::Synthetic { num_classes, .. } => format!("synthetic-k{num_classes}"),
            DatasetConfig::Folder { train_dir, .. } => train_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "folder".into()),
        }
    }

    /// Relative folder paths are resolved against `base`.
    pub fn resolve(&mut self, base: &Path) {
        if let DatasetConfig::Folder { train_dir, test_dir, .. } = self {
            for dir in [train_dir, test_dir] {
                if dir.is_relative() {
                    *dir = base.join(&*dir);
                }
            }
        }
    }
}

/// Self-supervised phase settings. Unset fields fall back to the
/// per-task defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    /// Overrides the per-task epoch budget.
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patch_size: usize,
    pub permutations: usize,
    pub projection_dim: usize,
    pub temperature: f64,
    pub augmentation: Option<AugmentationPipeline>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: None,
            batch_size: None,
            learning_rate: None,
            patch_size: 8,
            permutations: 100,
            projection_dim: 32,
            temperature: crate::pretext::DEFAULT_TEMPERATURE,
            augmentation: None,
        }
    }
}

/// Noisy-label retraining settings shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cosine: bool,
    pub augmentation: AugmentationPipeline,
}

impl Default for RetrainSection {
    fn default() -> Self {
        RetrainSection {
            epochs: 40,
            batch_size: 256,
            learning_rate: 0.01,
            cosine: false,
            augmentation: AugmentationPipeline::light(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoteachingSection {
    pub ramp_epochs: usize,
    /// `tau_f`; defaults to the noise rate of each run.
    pub forget_rate: Option<f64>,
    pub exponent: f64,
}

impl Default for CoteachingSection {
    fn default() -> Self {
        CoteachingSection {
            ramp_epochs: 10,
            forget_rate: None,
            exponent: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivideMixSection {
    pub warmup_epochs: usize,
    pub augmentations: usize,
    pub sharpen_temperature: f64,
    pub mixup_alpha: f64,
    pub clean_threshold: f64,
    /// Defaults to 0.25 at p = 0.8 and 0 otherwise.
    pub unlabeled_weight: Option<f64>,
    pub batch_size: usize,
}

impl Default for DivideMixSection {
    fn default() -> Self {
        let d = DivideMixConfig::for_noise_rate(0.0);
        DivideMixSection {
            warmup_epochs: d.warmup_epochs,
            augmentations: d.augmentations,
            sharpen_temperature: d.sharpen_temperature,
            mixup_alpha: d.mixup_alpha,
            clean_threshold: d.clean_threshold,
            unlabeled_weight: None,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub output_dir: PathBuf,
    pub noise_rates: Vec<f64>,
    pub pretext: PretextKind,
    pub method: LnlMethod,
    /// `tiny` or `resnet18-like`.
    pub encoder: String,
    /// Report the mean of both networks' softmax outputs for dual methods
    /// instead of network A alone.
    pub ensemble: bool,
    pub dataset: DatasetConfig,
    pub pretrain: PretrainSection,
    pub retrain: RetrainSection,
    pub coteaching: CoteachingSection,
    pub dividemix: DivideMixSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "desk".into(),
            seed: 0,
            trials: 3,
            output_dir: PathBuf::from("results"),
            noise_rates: vec![0.0, 0.4, 0.6, 0.8],
            pretext: PretextKind::None,
            method: LnlMethod::Ce,
            encoder: "tiny".into(),
            ensemble: false,
            dataset: DatasetConfig::Synthetic {
                num_classes: 4,
                train_per_class: 500,
                test_per_class: 100,
                height: 16,
                width: 16,
                channels: 1,
                template_seed: 7,
            },
            pretrain: PretrainSection::default(),
            retrain: RetrainSection::default(),
            coteaching: CoteachingSection::default(),
            dividemix: DivideMixSection::default(),
        }
    }
}

/// Desk-scale pretext epoch budgets.
fn desk_pretext_epochs(kind: PretextKind) -> usize {
    match kind {
        PretextKind::None => 0,
        PretextKind::Rotation => 30,
        PretextKind::Jigsaw | PretextKind::Jigmag => 20,
        PretextKind::Contrastive => 40,
    }
}

/// Full budgets used with `--paper-scale`.
fn full_pretext_epochs(kind: PretextKind) -> usize {
    match kind {
        PretextKind::None => 0,
        PretextKind::Rotation => 70,
        PretextKind::Jigsaw | PretextKind::Jigmag => 50,
        PretextKind::Contrastive => 100,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative dataset paths are resolved against the config file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.dataset.resolve(base);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML rendering (output directory
    /// excluded, so moving results does not change it).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        let text = canon.to_toml_string().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Full budgets: 50 retrain epochs and the per-task pretext epochs.
    pub fn paper_scale(mut self) -> Self {
        self.retrain.epochs = 50;
        self.pretrain.epochs = Some(full_pretext_epochs(self.pretext));
        self.pretrain.patch_size = crate::pretext::DEFAULT_PATCH_SIZE;
        self.pretrain.permutations = 1000;
        self.pretrain.projection_dim = 128;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.noise_rates.is_empty() {
            return Err(Error::Config("noise_rates must not be empty".into()));
        }
        if let Some(p) = self.noise_rates.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("noise rate {p} outside [0, 1]")));
        }
        let (h, w, c) = self.dataset.image_shape();
        if h < 4 || w < 4 || !matches!(c, 1 | 3) {
            return Err(Error::Config(format!("unsupported image shape {h}x{w}x{c}")));
        }
        if let DatasetConfig::Synthetic {
            num_classes,
            train_per_class,
            test_per_class,
            ..
        } = self.dataset
        {
            if num_classes < 2 || train_per_class == 0 || test_per_class == 0 {
                return Err(Error::Config("synthetic dataset needs >= 2 classes and non-empty splits".into()));
            }
        }
        self.encoder_config()?.validate()?;
        self.train_config(0).validate()?;
        Ok(())
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let (h, w, c) = self.dataset.image_shape();
        EncoderConfig::preset(&self.encoder, h, w, c)
    }

    pub fn pretext_config(&self, seed: u64) -> PretextConfig {
        let epochs = self.pretrain.epochs.unwrap_or_else(|| desk_pretext_epochs(self.pretext));
        let mut cfg = PretextConfig::new(self.pretext, epochs, seed);
        if let Some(b) = self.pretrain.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.pretrain.learning_rate {
            cfg.train.learning_rate = lr;
        }
        cfg.patch_size = self.pretrain.patch_size;
        cfg.permutations = self.pretrain.permutations;
        cfg.projection_dim = self.pretrain.projection_dim;
        cfg.temperature = self.pretrain.temperature;
        cfg.pipeline = self.pretrain.augmentation.clone();
        cfg
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::retrain(seed)
            .with_epochs(self.retrain.epochs)
            .with_batch_size(self.retrain.batch_size)
            .with_learning_rate(self.retrain.learning_rate)
            .with_augmentation(self.retrain.augmentation.clone());
        if self.retrain.cosine {
            cfg.lr_schedule = crate::nn::LrSchedule::CosineAnnealing;
        }
        cfg
    }

    pub fn coteaching_config(&self, p: f64) -> CoteachingConfig {
        CoteachingConfig {
            warmup_epochs: self.coteaching.ramp_epochs,
            forget_rate: self.coteaching.forget_rate.unwrap_or(p),
            exponent: self.coteaching.exponent,
        }
    }

    pub fn dividemix_config(&self, p: f64) -> DivideMixConfig {
        let d = &self.dividemix;
        DivideMixConfig {
            warmup_epochs: d.warmup_epochs,
            augmentations: d.augmentations,
            sharpen_temperature: d.sharpen_temperature,
            mixup_alpha: d.mixup_alpha,
            clean_threshold: d.clean_threshold,
            unlabeled_weight: d
                .unlabeled_weight
                .unwrap_or(DivideMixConfig::for_noise_rate(p).unlabeled_weight),
            batch_size: d.batch_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
name = "mini"
seed = 3
trials = 1
output_dir = "out"
noise_rates = [0.5]
pretext = "rotation"
method = "coteaching"
encoder = "tiny"

[dataset]
kind = "synthetic"
num_classes = 3
train_per_class = 10
test_per_class = 5
height = 8
width = 8
"#,
        )
        .unwrap();
        assert_eq!(cfg.retrain, RetrainSection::default());
        assert_eq!(cfg.coteaching_config(0.5).forget_rate, 0.5);
        assert_eq!(cfg.dividemix_config(0.8).unlabeled_weight, 0.25);
        assert_eq!(cfg.pretext_config(1).train.epochs, 30);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.noise_rates = vec![1.5];
        assert!(cfg.validate().is_err());
        assert!("sop".parse::<LnlMethod>().is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn paper_scale_budgets() {
        let mut cfg = ExperimentConfig::default();
        cfg.pretext = PretextKind::Contrastive;
        let cfg = cfg.paper_scale();
        assert_eq!(cfg.retrain.epochs, 50);
        assert_eq!(cfg.pretext_config(0).train.epochs, 100);
    }
}
