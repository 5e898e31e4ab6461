//! Noisy-label training: cross-entropy baseline, Co-teaching and DivideMix.

mod config;
mod primitives;
mod trainers;

pub use config::{CoteachingConfig, DivideMixConfig, TrainConfig};
pub use primitives::{
    co_guess, co_refine, fit_gmm_1d, forget_rate, keep_count, mixup, mixup_with_lambda, sample_mix_weight, sharpen,
    small_loss_select, GmmFit, GMM_MAX_ITER, GMM_TOLERANCE, GMM_VARIANCE_FLOOR,
};
pub use trainers::{
    train_coteaching, train_coteaching_observed, train_cross_entropy, train_dividemix, CoteachingStep, TrainOutcome,
};
