use std::fmt;
use std::str::FromStr;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::AugmentationPipeline;
use super::ntxent::{nt_xent_loss, DEFAULT_TEMPERATURE};
use super::permutations::PermutationSet;
use super::samples::{
    default_magnifications, make_contrastive_pair, make_jigmag_sample, make_jigsaw_sample, make_rotation_sample,
    PretextSample, PUZZLE_GRID,
};
use crate::data::{stack, Image};
use crate::error::{Error, Result};
use crate::lnl::TrainConfig;
use crate::model::{build_model, EncoderConfig, HeadKind, Model};
use crate::nn::{loss, LrSchedule, Optimizer, OptimizerConfig, Visit};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextKind {
    None,
    Rotation,
    Jigsaw,
    Jigmag,
    Contrastive,
}

impl PretextKind {
    pub const ALL: [PretextKind; 5] = [
        PretextKind::None,
        PretextKind::Rotation,
        PretextKind::Jigsaw,
        PretextKind::Jigmag,
        PretextKind::Contrastive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PretextKind::None => "none",
            PretextKind::Rotation => "rotation",
            PretextKind::Jigsaw => "jigsaw",
            PretextKind::Jigmag => "jigmag",
            PretextKind::Contrastive => "contrastive",
        }
    }

    /// Optimizer settings per task: rotation uses SGD at 0.01 with batch 256,
    /// the puzzles Adam at 0.001 with batch 128, contrastive Adam at 0.001
    /// with batch 256. All use weight decay 1e-4 and cosine annealing.
    pub fn default_train(self, epochs: usize, seed: u64) -> TrainConfig {
        let (batch_size, optimizer, learning_rate) = match self {
            PretextKind::Rotation | PretextKind::None => (256, OptimizerConfig::sgd(), 0.01),
            PretextKind::Jigsaw | PretextKind::Jigmag => (128, OptimizerConfig::adam(), 0.001),
            PretextKind::Contrastive => (256, OptimizerConfig::adam(), 0.001),
        };
        TrainConfig {
            epochs,
            batch_size,
            optimizer,
            learning_rate,
            lr_schedule: LrSchedule::CosineAnnealing,
            seed,
            augmentation: AugmentationPipeline::identity(),
        }
    }
}

impl fmt::Display for PretextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PretextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PretextKind::None),
            "rotation" => Ok(PretextKind::Rotation),
            "jigsaw" => Ok(PretextKind::Jigsaw),
            "jigmag" => Ok(PretextKind::Jigmag),
            "contrastive" | "simclr" => Ok(PretextKind::Contrastive),
            other => Err(Error::invalid(format!(
                "unknown pretext `{other}` (expected none, rotation, jigsaw, jigmag or contrastive)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretextConfig {
    pub kind: PretextKind,
    pub train: TrainConfig,
    /// Side of each puzzle patch after resizing.
    pub patch_size: usize,
    /// Number of puzzle permutations.
    pub permutations: usize,
    pub magnifications: Vec<f64>,
    pub temperature: f64,
    pub projection_dim: usize,
    /// Overrides the task's default augmentation pipeline.
    #[serde(default)]
    pub pipeline: Option<AugmentationPipeline>,
}

impl PretextConfig {
    pub fn new(kind: PretextKind, epochs: usize, seed: u64) -> Self {
        PretextConfig {
            kind,
            train: kind.default_train(epochs, seed),
            patch_size: super::samples::DEFAULT_PATCH_SIZE,
            permutations: 1000,
            magnifications: default_magnifications(),
            temperature: DEFAULT_TEMPERATURE,
            projection_dim: 64,
            pipeline: None,
        }
    }

    fn pipeline_for(&self, height: usize, width: usize) -> AugmentationPipeline {
        self.pipeline.clone().unwrap_or_else(|| match self.kind {
            PretextKind::Contrastive => AugmentationPipeline::contrastive(height, width),
            _ => AugmentationPipeline::strong(),
        })
    }

    pub fn head(&self) -> Result<HeadKind> {
        let cells = PUZZLE_GRID * PUZZLE_GRID;
        match self.kind {
            PretextKind::None => Err(Error::invalid("pretext `none` has no head to train")),
            PretextKind::Rotation => Ok(HeadKind::Rotation),
            PretextKind::Jigsaw | PretextKind::Jigmag => Ok(HeadKind::Permutation {
                permutations: self.permutations,
                cells,
            }),
            PretextKind::Contrastive => Ok(HeadKind::Projection {
                dim: self.projection_dim,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretextEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Training accuracy of the pretext prediction; absent for contrastive.
    pub accuracy: Option<f64>,
}

pub struct PretextOutcome {
    pub model: Model,
    pub trace: Vec<PretextEpoch>,
    pub permutations: Option<PermutationSet>,
}

/// Train an encoder on a self-supervised task over `images`. Labels are
/// never consulted.
pub fn pretrain(encoder: &EncoderConfig, images: &[&Image], cfg: &PretextConfig) -> Result<PretextOutcome> {
    cfg.train.validate()?;
    let head = cfg.head()?;
    if images.len() < 2 {
        return Err(Error::Dataset("pretraining needs at least 2 images".into()));
    }
    let root = cfg.train.seed;
    let mut model = build_model(encoder, head, seed::derive(root, "pretext-init"))?;
    let perms = match cfg.kind {
        PretextKind::Jigsaw | PretextKind::Jigmag => Some(PermutationSet::generate(
            PUZZLE_GRID * PUZZLE_GRID,
            cfg.permutations,
            seed::derive(root, "permutations"),
        )?),
        _ => None,
    };
    let (h, w) = (images[0].height(), images[0].width());
    let pipeline = cfg.pipeline_for(h, w);
    let mut opt = Optimizer::new(cfg.train.optimizer);
    let mut trace = Vec::with_capacity(cfg.train.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();

    for epoch in 0..cfg.train.epochs {
        let epoch_seed = seed::derive_indexed(root, "pretext-epoch", epoch as u64);
        order.shuffle(&mut seed::rng_for(epoch_seed, "order"));
        let lr = cfg.train.lr_at(epoch);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.train.batch_size) {
            // A single row cannot be batch-normalized and has no negatives.
            if batch.len() < 2 {
                continue;
            }
            let samples = batch
                .par_iter()
                .map(|&i| {
                    let s = seed::derive_indexed(epoch_seed, "sample", i as u64);
                    match cfg.kind {
                        PretextKind::Rotation => make_rotation_sample(images[i], &pipeline, s),
                        PretextKind::Jigsaw => {
                            make_jigsaw_sample(images[i], &pipeline, perms.as_ref().expect("perms"), cfg.patch_size, s)
                        }
                        PretextKind::Jigmag => make_jigmag_sample(
                            images[i],
                            &pipeline,
                            perms.as_ref().expect("perms"),
                            &cfg.magnifications,
                            cfg.patch_size,
                            s,
                        ),
                        PretextKind::Contrastive => Ok(make_contrastive_pair(images[i], &pipeline, s)),
                        PretextKind::None => unreachable!("rejected above"),
                    }
                })
                .collect::<Result<Vec<PretextSample>>>()?;
            let (x, targets) = assemble(&samples, cfg.kind);
            model.zero_grad();
            let out = model.forward(&x, true);
            let (l, grad) = if cfg.kind == PretextKind::Contrastive {
                nt_xent_loss(out.view(), cfg.temperature)?
            } else {
                let pred = loss::argmax_rows(out.view());
                correct += pred.iter().zip(&targets).filter(|(p, t)| p == t).count();
                loss::cross_entropy(out.view(), &targets)
            };
            model.backward(&grad);
            opt.step(&mut model, lr);
            loss_sum += l * batch.len() as f64;
            seen += batch.len();
        }
        let loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        log::info!("pretext {} epoch {epoch}: loss {loss:.4}", cfg.kind);
        trace.push(PretextEpoch {
            epoch,
            loss,
            accuracy: (cfg.kind != PretextKind::Contrastive && seen > 0).then(|| correct as f64 / seen as f64),
        });
    }
    Ok(PretextOutcome {
        model,
        trace,
        permutations: perms,
    })
}

fn assemble(samples: &[PretextSample], kind: PretextKind) -> (Array4<f64>, Vec<usize>) {
    let targets = samples.iter().filter_map(|s| s.target).collect();
    let rows: Vec<&Image> = if kind == PretextKind::Contrastive {
        samples
            .iter()
            .map(|s| &s.inputs[0])
            .chain(samples.iter().map(|s| &s.inputs[1]))
            .collect()
    } else {
        samples.iter().flat_map(|s| s.inputs.iter()).collect()
    };
    (stack(&rows), targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_dataset, SyntheticSpec};

    fn images() -> Vec<Image> {
        make_synthetic_dataset(&SyntheticSpec::new(3, 6, (12, 12), 1))
            .unwrap()
            .images()
            .iter()
            .map(|s| s.image.clone())
            .collect()
    }

    #[test]
    fn every_task_runs_and_is_deterministic() {
        let imgs = images();
        let refs: Vec<&Image> = imgs.iter().collect();
        let enc = EncoderConfig::tiny(12, 12, 1);
        for kind in [PretextKind::Rotation, PretextKind::Jigsaw, PretextKind::Jigmag, PretextKind::Contrastive] {
            let mut cfg = PretextConfig::new(kind, 2, 5);
            cfg.train.batch_size = 6;
            cfg.patch_size = 6;
            cfg.permutations = 10;
            cfg.projection_dim = 8;
            let a = pretrain(&enc, &refs, &cfg).unwrap();
            let b = pretrain(&enc, &refs, &cfg).unwrap();
            assert_eq!(a.trace.len(), 2);
            assert!(a.trace.iter().all(|e| e.loss.is_finite()), "{kind}");
            assert_eq!(a.model.parameter_hash(), b.model.parameter_hash());
        }
    }

    #[test]
    fn kind_parsing() {
        for k in PretextKind::ALL {
            assert_eq!(k.name().parse::<PretextKind>().unwrap(), k);
        }
        assert!("colorization".parse::<PretextKind>().is_err());
        assert!(PretextConfig::new(PretextKind::None, 1, 0).head().is_err());
    }

    #[test]
    fn rotation_loss_falls_on_oriented_images() {
        let imgs = make_synthetic_dataset(&SyntheticSpec::new(4, 16, (12, 12), 2)).unwrap();
        let refs = imgs.pixels();
        let mut cfg = PretextConfig::new(PretextKind::Rotation, 8, 1);
        cfg.train.batch_size = 16;
        cfg.train.learning_rate = 0.05;
        let out = pretrain(&EncoderConfig::tiny(12, 12, 1), &refs, &cfg).unwrap();
        let first = out.trace.first().unwrap().loss;
        let last = out.trace.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
    }
}
