use std::path::Path;

use image::{Rgb, RgbImage};

use super::Model;
use crate::error::{Error, Result};
use crate::seed;

/// Screen pixels per kernel tap.
pub const FILTER_PIXEL_SCALE: u32 = 8;
/// Gap between tiles and around the border.
pub const FILTER_GRID_GAP: u32 = 2;

/// Render `count` seeded-randomly chosen first-layer kernels as a tiled PNG.
///
/// Each kernel is min-max normalized on its own; a constant kernel renders as
/// mid-gray. Three-channel kernels render in color, others as the channel
/// mean. Returns the `(width, height)` of the written image.
pub fn export_filter_grid(model: &Model, count: usize, path: impl AsRef<Path>, seed: u64) -> Result<(u32, u32)> {
    let conv = model.encoder().first_conv();
    let weights = &conv.weight.value;
    let (filters, in_ch, k) = (conv.out_channels(), conv.in_channels(), conv.kernel());
    if count == 0 || count > filters {
        return Err(Error::invalid(format!(
            "cannot draw {count} filters from a first layer with {filters}"
        )));
    }
    let mut chosen = rand::seq::index::sample(&mut seed::rng_for(seed, "filter-grid"), filters, count).into_vec();
    chosen.sort_unstable();

    let cols = (count as f64).sqrt().ceil() as u32;
    let rows = (count as u32).div_ceil(cols);
    let tile = k as u32 * FILTER_PIXEL_SCALE;
    let width = cols * tile + (cols + 1) * FILTER_GRID_GAP;
    let height = rows * tile + (rows + 1) * FILTER_GRID_GAP;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    for (slot, &f) in chosen.iter().enumerate() {
        let filter = weights.index_axis(ndarray::Axis(0), f);
        let (lo, hi) = filter
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let to_u8 = |v: f64| (norm(v) * 255.0).round().clamp(0.0, 255.0) as u8;
        let x0 = FILTER_GRID_GAP + (slot as u32 % cols) * (tile + FILTER_GRID_GAP);
        let y0 = FILTER_GRID_GAP + (slot as u32 / cols) * (tile + FILTER_GRID_GAP);
        for ky in 0..k {
            for kx in 0..k {
                let rgb = if in_ch == 3 {
                    [
                        to_u8(filter[[0, ky, kx]]),
                        to_u8(filter[[1, ky, kx]]),
                        to_u8(filter[[2, ky, kx]]),
                    ]
                } else {
                    let mean = (0..in_ch).map(|c| filter[[c, ky, kx]]).sum::<f64>() / in_ch as f64;
                    let g = to_u8(mean);
                    [g, g, g]
                };
                for dy in 0..FILTER_PIXEL_SCALE {
                    for dx in 0..FILTER_PIXEL_SCALE {
                        img.put_pixel(
                            x0 + kx as u32 * FILTER_PIXEL_SCALE + dx,
                            y0 + ky as u32 * FILTER_PIXEL_SCALE + dy,
                            Rgb(rgb),
                        );
                    }
                }
            }
        }
    }
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok((width, height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, EncoderConfig, HeadKind};
    use crate::nn::Visit;

    #[test]
    fn grid_dimensions_and_determinism() {
        let model = build_model(&EncoderConfig::resnet18_like(32, 32, 3), HeadKind::Rotation, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let (w, h) = export_filter_grid(&model, 16, &a, 5).unwrap();
        export_filter_grid(&model, 16, &b, 5).unwrap();
        assert_eq!((w, h), (4 * 56 + 5 * FILTER_GRID_GAP, 4 * 56 + 5 * FILTER_GRID_GAP));
        let decoded = image::open(&a).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (w, h));
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(export_filter_grid(&model, 65, dir.path().join("c.png"), 5).is_err());
    }

    #[test]
    fn constant_filter_renders_mid_gray() {
        let mut model = build_model(&EncoderConfig::tiny(8, 8, 1), HeadKind::Rotation, 0).unwrap();
        model.visit_mut("", &mut |name, p| {
            if name == "encoder.conv1.weight" {
                p.value.fill(0.25);
            }
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        export_filter_grid(&model, 4, &path, 1).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        let px = img.get_pixel(FILTER_GRID_GAP + 1, FILTER_GRID_GAP + 1);
        assert_eq!(px.0, [128, 128, 128]);
    }
}
