use rand::Rng;

use super::augment::{resize_bilinear, rot90, standardize_per_channel, AugmentationPipeline};
use super::permutations::PermutationSet;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::seed;

/// Side of the 3x3 puzzle grid.
pub const PUZZLE_GRID: usize = 3;
/// Patch side used when none is configured.
pub const DEFAULT_PATCH_SIZE: usize = 64;

/// Evenly spaced magnifications from 1 to 5.
pub fn default_magnifications() -> Vec<f64> {
    (0..9).map(|i| 1.0 + 0.5 * i as f64).collect()
}

/// Inputs for one pretext example. Rotation yields one image, puzzles yield
/// one patch per cell and contrastive pairs yield two views (no target).
#[derive(Clone, Debug, PartialEq)]
pub struct PretextSample {
    pub inputs: Vec<Image>,
    pub target: Option<usize>,
    /// Set when a puzzle patch was constant and got zeroed.
    pub degenerate_patch: bool,
}

pub fn make_rotation_sample(img: &Image, pipeline: &AugmentationPipeline, seed: u64) -> Result<PretextSample> {
    let aug = pipeline.apply(img, seed::derive(seed, "augment"));
    if aug.height() != aug.width() {
        return Err(Error::invalid(format!(
            "rotation needs square images, got {}x{}",
            aug.height(),
            aug.width()
        )));
    }
    let k = seed::rng_for(seed, "rotation").random_range(0..4);
    Ok(PretextSample {
        inputs: vec![rot90(&aug, k)],
        target: Some(k),
        degenerate_patch: false,
    })
}

fn crop(img: &Image, y0: usize, x0: usize, h: usize, w: usize) -> Image {
    Image::from_fn(img.channels(), h, w, |(c, y, x)| img.get(c, y0 + y, x0 + x))
}

fn check_puzzle(perms: &PermutationSet, patch_size: usize) -> Result<()> {
    if perms.cells() != PUZZLE_GRID * PUZZLE_GRID {
        return Err(Error::invalid(format!("puzzles need 9-cell permutations, got {}", perms.cells())));
    }
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    Ok(())
}

fn finish_patches(cells: Vec<Image>, perms: &PermutationSet, patch_size: usize, seed: u64) -> PretextSample {
    let mut degenerate = false;
    let prepared: Vec<Image> = cells
        .iter()
        .map(|c| {
            let (p, d) = standardize_per_channel(&resize_bilinear(c, patch_size, patch_size));
            degenerate |= d;
            p
        })
        .collect();
    let t = seed::rng_for(seed, "permutation").random_range(0..perms.len());
    let inputs = perms.get(t).iter().map(|&cell| prepared[cell].clone()).collect();
    if degenerate {
        log::debug!("constant puzzle patch replaced by zeros");
    }
    PretextSample {
        inputs,
        target: Some(t),
        degenerate_patch: degenerate,
    }
}

/// 3x3 grid of non-overlapping cells; output slot `i` holds cell
/// `perms[t][i]`, each resized and standardized on its own.
pub fn make_jigsaw_sample(
    img: &Image,
    pipeline: &AugmentationPipeline,
    perms: &PermutationSet,
    patch_size: usize,
    seed: u64,
) -> Result<PretextSample> {
    check_puzzle(perms, patch_size)?;
    let aug = pipeline.apply(img, seed::derive(seed, "augment"));
    let (ch, cw) = (aug.height() / PUZZLE_GRID, aug.width() / PUZZLE_GRID);
    if ch == 0 || cw == 0 {
        return Err(Error::invalid(format!(
            "image {}x{} is too small for a 3x3 grid",
            aug.height(),
            aug.width()
        )));
    }
    let cells = (0..PUZZLE_GRID * PUZZLE_GRID)
        .map(|j| crop(&aug, (j / PUZZLE_GRID) * ch, (j % PUZZLE_GRID) * cw, ch, cw))
        .collect();
    Ok(finish_patches(cells, perms, patch_size, seed))
}

/// Side of the square crop taken at magnification `factor`.
pub fn magnified_side(side: usize, factor: f64) -> usize {
    // Guard against 320 / 5 landing just below 64 in floating point.
    (side as f64 / factor + 1e-9).floor() as usize
}

/// One seeded square crop per magnification factor; crops may overlap.
pub fn make_jigmag_sample(
    img: &Image,
    pipeline: &AugmentationPipeline,
    perms: &PermutationSet,
    factors: &[f64],
    patch_size: usize,
    seed: u64,
) -> Result<PretextSample> {
    check_puzzle(perms, patch_size)?;
    if factors.len() != perms.cells() {
        return Err(Error::invalid(format!("need {} magnification factors, got {}", perms.cells(), factors.len())));
    }
    if factors.iter().any(|&f| f < 1.0) {
        return Err(Error::invalid("magnification factors must be at least 1"));
    }
    let aug = pipeline.apply(img, seed::derive(seed, "augment"));
    let side = aug.height().min(aug.width());
    let mut rng = seed::rng_for(seed, "magnify");
    let mut cells = Vec::with_capacity(factors.len());
    for &f in factors {
        let s = magnified_side(side, f);
        if s < 2 {
            return Err(Error::invalid(format!(
                "magnification {f} leaves a {s}-pixel crop of a {side}-pixel image"
            )));
        }
        let y0 = rng.random_range(0..=aug.height() - s);
        let x0 = rng.random_range(0..=aug.width() - s);
        cells.push(crop(&aug, y0, x0, s, s));
    }
    Ok(finish_patches(cells, perms, patch_size, seed))
}

pub fn make_contrastive_pair(img: &Image, pipeline: &AugmentationPipeline, seed: u64) -> PretextSample {
    PretextSample {
        inputs: vec![
            pipeline.apply(img, seed::derive(seed, "view-a")),
            pipeline.apply(img, seed::derive(seed, "view-b")),
        ],
        target: None,
        degenerate_patch: false,
    }
}
