use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::seed;

/// One augmentation step. Probabilities gate whether the op fires at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugOp {
    HorizontalFlip { prob: f64 },
    SmallRotation { max_degrees: f64 },
    Sharpness { prob: f64, min_factor: f64, max_factor: f64 },
    Equalize { prob: f64 },
    Autocontrast { prob: f64 },
    ColorJitter { prob: f64, strength: f64 },
    GaussianBlur { prob: f64, kernel: usize, sigma_min: f64, sigma_max: f64 },
    Resize { height: usize, width: usize },
    /// Per-channel `(x - mean) / std`; leaves the unit range.
    Standardize { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPipeline {
    pub ops: Vec<AugOp>,
}

impl AugmentationPipeline {
    pub fn new(ops: Vec<AugOp>) -> Self {
        AugmentationPipeline { ops }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Flips, small rotations, sharpness, equalization and autocontrast.
    pub fn strong() -> Self {
        Self::new(vec![
            AugOp::HorizontalFlip { prob: 0.5 },
            AugOp::SmallRotation { max_degrees: 10.0 },
            AugOp::Sharpness {
                prob: 0.5,
                min_factor: 0.5,
                max_factor: 2.0,
            },
            AugOp::Equalize { prob: 0.2 },
            AugOp::Autocontrast { prob: 0.3 },
        ])
    }

    /// Flips, color jitter and Gaussian blur.
    pub fn contrastive(height: usize, width: usize) -> Self {
        let kernel = ((height.min(width) / 10) | 1).max(3);
        Self::new(vec![
            AugOp::Resize { height, width },
            AugOp::HorizontalFlip { prob: 0.5 },
            AugOp::ColorJitter {
                prob: 0.8,
                strength: 0.5,
            },
            AugOp::GaussianBlur {
                prob: 0.5,
                kernel,
                sigma_min: 0.1,
                sigma_max: 2.0,
            },
        ])
    }

    pub fn light() -> Self {
        Self::new(vec![AugOp::HorizontalFlip { prob: 0.5 }])
    }

    pub fn push(mut self, op: AugOp) -> Self {
        self.ops.push(op);
        self
    }

    pub fn apply(&self, img: &Image, seed: u64) -> Image {
        self.apply_with(img, &mut seed::rng(seed))
    }

    pub fn apply_with(&self, img: &Image, rng: &mut ChaCha8Rng) -> Image {
        let mut out = img.clone();
        for op in &self.ops {
            out = apply_op(op, out, rng);
        }
        out
    }
}

fn fires(rng: &mut ChaCha8Rng, prob: f64) -> bool {
    // Always draw so later ops see the same stream regardless of outcome.
    let u: f64 = rng.random();
    u < prob
}

fn apply_op(op: &AugOp, img: Image, rng: &mut ChaCha8Rng) -> Image {
    let mut out = match op {
        AugOp::HorizontalFlip { prob } => {
            if fires(rng, *prob) {
                hflip(&img)
            } else {
                img
            }
        }
        AugOp::SmallRotation { max_degrees } => {
            let deg = if *max_degrees > 0.0 {
                rng.random_range(-max_degrees..=*max_degrees)
            } else {
                0.0
            };
            if deg == 0.0 {
                img
            } else {
                rotate_bilinear(&img, deg.to_radians())
            }
        }
        AugOp::Sharpness {
            prob,
            min_factor,
            max_factor,
        } => {
            let go = fires(rng, *prob);
            let f = rng.random_range(*min_factor..=*max_factor);
            if go {
                sharpness(&img, f)
            } else {
                img
            }
        }
        AugOp::Equalize { prob } => {
            if fires(rng, *prob) {
                equalize(&img)
            } else {
                img
            }
        }
        AugOp::Autocontrast { prob } => {
            if fires(rng, *prob) {
                autocontrast(&img)
            } else {
                img
            }
        }
        AugOp::ColorJitter { prob, strength } => {
            let go = fires(rng, *prob);
            let s = *strength;
            let b = rng.random_range(1.0 - 0.8 * s..=1.0 + 0.8 * s);
            let c = rng.random_range(1.0 - 0.8 * s..=1.0 + 0.8 * s);
            let sat = rng.random_range(1.0 - 0.8 * s..=1.0 + 0.8 * s);
            let hue = rng.random_range(-0.2 * s..=0.2 * s);
            if go {
                color_jitter(&img, b, c, sat, hue)
            } else {
                img
            }
        }
        AugOp::GaussianBlur {
            prob,
            kernel,
            sigma_min,
            sigma_max,
        } => {
            let go = fires(rng, *prob);
            let sigma = rng.random_range(*sigma_min..=*sigma_max);
            if go {
                gaussian_blur(&img, *kernel, sigma)
            } else {
                img
            }
        }
        AugOp::Resize { height, width } => resize_bilinear(&img, *height, *width),
        AugOp::Standardize { mean, std } => return standardize(&img, mean, std),
    };
    out.clamp_unit();
    out
}

pub fn hflip(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(img.channels(), img.height(), w, |(c, y, x)| img.get(c, y, w - 1 - x))
}

/// Rotate by `k` quarter turns counter-clockwise.
pub fn rot90(img: &Image, k: usize) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    match k % 4 {
        0 => img.clone(),
        1 => Image::from_fn(c, w, h, |(ch, y, x)| img.get(ch, x, w - 1 - y)),
        2 => Image::from_fn(c, h, w, |(ch, y, x)| img.get(ch, h - 1 - y, w - 1 - x)),
        _ => Image::from_fn(c, w, h, |(ch, y, x)| img.get(ch, h - 1 - x, y)),
    }
}

/// Bilinear sample with edge clamping.
fn sample_bilinear(img: &Image, c: usize, y: f64, x: f64) -> f64 {
    let (h, w) = (img.height(), img.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
    let bottom = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotate about the image center with bilinear interpolation and edge padding.
pub fn rotate_bilinear(img: &Image, radians: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (cos, sin) = (radians.cos(), radians.sin());
    Image::from_fn(img.channels(), h, w, |(c, y, x)| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        sample_bilinear(img, c, sy, sx)
    })
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    if (h, w) == (height, width) {
        return img.clone();
    }
    let (sy, sx) = (h as f64 / height as f64, w as f64 / width as f64);
    Image::from_fn(img.channels(), height, width, |(c, y, x)| {
        sample_bilinear(img, c, (y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5)
    })
}

fn smooth3(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    Image::from_fn(img.channels(), h, w, |(c, y, x)| {
        if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
            return img.get(c, y, x);
        }
        let mut acc = 4.0 * img.get(c, y, x);
        for dy in 0..3 {
            for dx in 0..3 {
                acc += img.get(c, y + dy - 1, x + dx - 1);
            }
        }
        acc / 13.0
    })
}

/// `factor` 1 is the identity, below 1 blurs, above 1 sharpens.
pub fn sharpness(img: &Image, factor: f64) -> Image {
    let smooth = smooth3(img);
    let px = &smooth.pixels() + &((&img.pixels() - &smooth.pixels()) * factor);
    Image::new(px)
}

/// Per-channel histogram equalization over 256 levels.
pub fn equalize(img: &Image) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let n = h * w;
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        let level = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as usize;
        let mut hist = [0usize; 256];
        for y in 0..h {
            for x in 0..w {
                hist[level(img.get(ch, y, x))] += 1;
            }
        }
        let mut cdf = [0usize; 256];
        let mut run = 0;
        for (i, &count) in hist.iter().enumerate() {
            run += count;
            cdf[i] = run;
        }
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
        for y in 0..h {
            for x in 0..w {
                let v = img.get(ch, y, x);
                out[[ch, y, x]] = if n == cdf_min {
                    v
                } else {
                    (cdf[level(v)] - cdf_min) as f64 / (n - cdf_min) as f64
                };
            }
        }
    }
    Image::new(out)
}

/// Stretch each channel to span `[0, 1]`; constant channels are untouched.
pub fn autocontrast(img: &Image) -> Image {
    let mut px = img.pixels().to_owned();
    for mut ch in px.outer_iter_mut() {
        let (lo, hi) = ch.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            ch.mapv_inplace(|v| (v - lo) / (hi - lo));
        }
    }
    Image::new(px)
}

fn gray(img: &Image) -> Array3<f64> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    if c == 3 {
        Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            0.299 * img.get(0, y, x) + 0.587 * img.get(1, y, x) + 0.114 * img.get(2, y, x)
        })
    } else {
        img.pixels().to_owned()
    }
}

/// Brightness, contrast, saturation and hue adjustments. Saturation and hue
/// only act on three-channel images.
pub fn color_jitter(img: &Image, brightness: f64, contrast: f64, saturation: f64, hue: f64) -> Image {
    let mut px = img.pixels().to_owned() * brightness;
    px.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let mean = gray(&Image::new(px.clone())).mean().unwrap_or(0.0);
    px.mapv_inplace(|v| (mean + contrast * (v - mean)).clamp(0.0, 1.0));
    if img.channels() == 3 {
        let g = gray(&Image::new(px.clone()));
        for c in 0..3 {
            let mut ch = px.index_axis_mut(ndarray::Axis(0), c);
            ch.zip_mut_with(&g.index_axis(ndarray::Axis(0), 0), |v, &gv| {
                *v = (gv + saturation * (*v - gv)).clamp(0.0, 1.0)
            });
        }
        if hue != 0.0 {
            // Rotate chroma in YIQ space by `hue` turns.
            let (cos, sin) = ((hue * 2.0 * std::f64::consts::PI).cos(), (hue * 2.0 * std::f64::consts::PI).sin());
            let (h, w) = (img.height(), img.width());
            for y in 0..h {
                for x in 0..w {
                    let (r, g, b) = (px[[0, y, x]], px[[1, y, x]], px[[2, y, x]]);
                    let yy = 0.299 * r + 0.587 * g + 0.114 * b;
                    let i = 0.596 * r - 0.274 * g - 0.322 * b;
                    let q = 0.211 * r - 0.523 * g + 0.312 * b;
                    let (i2, q2) = (cos * i - sin * q, sin * i + cos * q);
                    px[[0, y, x]] = yy + 0.956 * i2 + 0.621 * q2;
                    px[[1, y, x]] = yy - 0.272 * i2 - 0.647 * q2;
                    px[[2, y, x]] = yy - 1.106 * i2 + 1.703 * q2;
                }
            }
        }
    }
    Image::new(px)
}

/// Separable Gaussian blur with an odd `kernel` and edge clamping.
pub fn gaussian_blur(img: &Image, kernel: usize, sigma: f64) -> Image {
    let kernel = kernel.max(1) | 1;
    let r = (kernel / 2) as isize;
    let weights: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|v| v / total).collect();
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horizontal = Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        (-r..=r)
            .zip(&weights)
            .map(|(d, k)| k * img.get(ch, y, clampi(x as isize + d, w)))
            .sum::<f64>()
    });
    Image::new(Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        (-r..=r)
            .zip(&weights)
            .map(|(d, k)| k * horizontal[[ch, clampi(y as isize + d, h), x]])
            .sum::<f64>()
    }))
}

pub fn standardize(img: &Image, mean: &[f64], std: &[f64]) -> Image {
    let pick = |v: &[f64], c: usize, default: f64| v.get(c).or(v.first()).copied().unwrap_or(default);
    Image::from_fn(img.channels(), img.height(), img.width(), |(c, y, x)| {
        (img.get(c, y, x) - pick(mean, c, 0.0)) / pick(std, c, 1.0)
    })
}

/// Zero-mean unit-std per channel; channels with std below `1e-6` become
/// all zeros.
pub fn standardize_per_channel(img: &Image) -> (Image, bool) {
    let mut px = img.pixels().to_owned();
    let mut degenerate = false;
    for mut ch in px.outer_iter_mut() {
        let n = ch.len() as f64;
        let mean = ch.sum() / n;
        let std = (ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if std < 1e-6 {
            ch.fill(0.0);
            degenerate = true;
        } else {
            ch.mapv_inplace(|v| (v - mean) / std);
        }
    }
    (Image::new(px), degenerate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Image {
        Image::from_fn(c, h, w, |(ch, y, x)| ((ch * 7 + y * w + x) % 17) as f64 / 16.0)
    }

    #[test]
    fn quarter_turns_compose() {
        let img = ramp(2, 5, 7);
        assert_eq!(rot90(&rot90(&img, 1), 1), rot90(&img, 2));
        assert_eq!(rot90(&rot90(&img, 3), 1), img);
        assert_eq!(rot90(&img, 0), img);
        let r = rot90(&img, 1);
        assert_eq!((r.height(), r.width()), (7, 5));
    }

    #[test]
    fn zero_angle_rotation_and_unit_resize_are_identity() {
        let img = ramp(1, 6, 6);
        let r = rotate_bilinear(&img, 0.0);
        assert!(r.l2_distance(&img) < 1e-12);
        assert_eq!(resize_bilinear(&img, 6, 6), img);
        let up = resize_bilinear(&Image::from_fn(1, 2, 2, |_| 0.3), 5, 5);
        assert!(up.pixels().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn pipeline_is_deterministic_and_in_range() {
        let img = ramp(3, 12, 12);
        for pipe in [AugmentationPipeline::strong(), AugmentationPipeline::contrastive(12, 12)] {
            for s in 0..20 {
                let a = pipe.apply(&img, s);
                assert_eq!(a, pipe.apply(&img, s));
                assert!(a.in_unit_range());
            }
        }
    }

    #[test]
    fn zero_probability_pipeline_only_resizes() {
        let img = ramp(1, 8, 8);
        let pipe = AugmentationPipeline::new(vec![
            AugOp::Resize { height: 4, width: 4 },
            AugOp::HorizontalFlip { prob: 0.0 },
            AugOp::ColorJitter {
                prob: 0.0,
                strength: 0.5,
            },
            AugOp::GaussianBlur {
                prob: 0.0,
                kernel: 3,
                sigma_min: 0.1,
                sigma_max: 2.0,
            },
        ]);
        assert_eq!(pipe.apply(&img, 3), resize_bilinear(&img, 4, 4));
    }

    #[test]
    fn sharpness_one_is_identity_and_blur_preserves_constants() {
        let img = ramp(1, 6, 6);
        assert!(sharpness(&img, 1.0).l2_distance(&img) < 1e-12);
        let flat = Image::from_fn(1, 5, 5, |_| 0.4);
        assert!(gaussian_blur(&flat, 5, 1.3).l2_distance(&flat) < 1e-12);
    }

    #[test]
    fn autocontrast_and_equalize_span_the_range() {
        let img = Image::from_fn(1, 4, 4, |(_, y, x)| 0.3 + 0.02 * (y * 4 + x) as f64);
        let a = autocontrast(&img);
        let (lo, hi) = a.pixels().iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let e = equalize(&img);
        assert!(e.in_unit_range());
        assert!((e.pixels().iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_channel_standardization() {
        let img = ramp(2, 5, 5);
        let (s, degenerate) = standardize_per_channel(&img);
        assert!(!degenerate);
        for ch in s.pixels().outer_iter() {
            let mean = ch.mean().unwrap();
            let std = ch.mapv(|v| (v - mean).powi(2)).mean().unwrap().sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        }
        let (z, degenerate) = standardize_per_channel(&Image::from_fn(1, 3, 3, |_| 0.7));
        assert!(degenerate);
        assert!(z.pixels().iter().all(|&v| v == 0.0));
    }
}
