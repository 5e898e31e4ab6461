//! Augmentations, self-supervised sample generators, the contrastive loss
//! and the pretext training loop.

mod augment;
mod ntxent;
mod permutations;
mod samples;
mod train;

pub use augment::{
    autocontrast, color_jitter, equalize, gaussian_blur, hflip, resize_bilinear, rot90, rotate_bilinear, sharpness,
    standardize, standardize_per_channel, AugOp, AugmentationPipeline,
};
pub use ntxent::{nt_xent_loss, DEFAULT_TEMPERATURE};
pub use permutations::{hamming, PermutationSet};
pub use samples::{
    default_magnifications, magnified_side, make_contrastive_pair, make_jigmag_sample, make_jigsaw_sample,
    make_rotation_sample, PretextSample, DEFAULT_PATCH_SIZE, PUZZLE_GRID,
};
pub use train::{pretrain, PretextConfig, PretextEpoch, PretextKind, PretextOutcome};
