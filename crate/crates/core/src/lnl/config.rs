use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LrSchedule, OptimizerConfig};
use crate::pretext::AugmentationPipeline;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Per-sample augmentation applied by the noisy-label trainers.
    #[serde(default = "AugmentationPipeline::light")]
    pub augmentation: AugmentationPipeline,
}

impl TrainConfig {
    /// Noisy-label retraining defaults: SGD 0.9 momentum, weight decay 1e-4,
    /// lr 0.01, batch 256, 50 epochs, constant schedule.
    pub fn retrain(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            optimizer: OptimizerConfig::sgd(),
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Constant,
            seed,
            augmentation: AugmentationPipeline::light(),
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_augmentation(mut self, augmentation: AugmentationPipeline) -> Self {
        self.augmentation = augmentation;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule.at(self.learning_rate, epoch, self.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoteachingConfig {
    /// Length `T_k` of the forget-rate ramp, in epochs.
    pub warmup_epochs: usize,
    /// Final forget rate `tau_f`, usually the noise rate.
    pub forget_rate: f64,
    pub exponent: f64,
}

impl CoteachingConfig {
    pub fn new(forget_rate: f64) -> Self {
        CoteachingConfig {
            warmup_epochs: 10,
            forget_rate,
            exponent: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.forget_rate) {
            return Err(Error::invalid(format!("forget rate {} outside [0, 1]", self.forget_rate)));
        }
        if self.warmup_epochs == 0 {
            return Err(Error::invalid("co-teaching warm-up must be at least 1 epoch"));
        }
        if !(self.exponent > 0.0) {
            return Err(Error::invalid("co-teaching exponent must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivideMixConfig {
    pub warmup_epochs: usize,
    /// Augmented views per sample used for co-refinement and co-guessing.
    pub augmentations: usize,
    pub sharpen_temperature: f64,
    pub mixup_alpha: f64,
    pub clean_threshold: f64,
    pub unlabeled_weight: f64,
    pub batch_size: usize,
}

impl DivideMixConfig {
    /// `lambda_u` is 0.25 at noise rate 0.8 and 0 otherwise.
    pub fn for_noise_rate(p: f64) -> Self {
        DivideMixConfig {
            warmup_epochs: 10,
            augmentations: 2,
            sharpen_temperature: 0.2,
            mixup_alpha: 4.0,
            clean_threshold: 0.2,
            unlabeled_weight: if (p - 0.8).abs() < 1e-9 { 0.25 } else { 0.0 },
            batch_size: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sharpen_temperature > 0.0) {
            return Err(Error::invalid("sharpening temperature must be positive"));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::invalid("mixup alpha must be positive"));
        }
        if !(0.0..=1.0).contains(&self.clean_threshold) {
            return Err(Error::invalid("clean threshold must lie in [0, 1]"));
        }
        if !(self.unlabeled_weight >= 0.0) {
            return Err(Error::invalid("unlabeled weight must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("DivideMix batch size must be positive"));
        }
        if self.augmentations == 0 {
            return Err(Error::invalid("at least one augmentation per sample is required"));
        }
        Ok(())
    }
}
