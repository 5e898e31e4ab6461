use ndarray::{Array3, Array4, ArrayView3, Axis};

/// Planar `(channels, height, width)` intensity array.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    pub fn new(pixels: Array3<f64>) -> Self {
        Image {
            pixels: pixels.as_standard_layout().into_owned(),
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image::new(Array3::zeros((channels, height, width)))
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl FnMut((usize, usize, usize)) -> f64) -> Self {
        Image::new(Array3::from_shape_fn((channels, height, width), f))
    }

    pub fn channels(&self) -> usize {
        self.pixels.len_of(Axis(0))
    }

    pub fn height(&self) -> usize {
        self.pixels.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.pixels.len_of(Axis(2))
    }

    pub fn pixels(&self) -> ArrayView3<'_, f64> {
        self.pixels.view()
    }

    pub fn pixels_mut(&mut self) -> &mut Array3<f64> {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[[c, y, x]]
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clamp_unit(&mut self) {
        self.pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    pub fn l2_distance(&self, other: &Image) -> f64 {
        (&self.pixels - &other.pixels).mapv(|d| d * d).sum().sqrt()
    }
}

/// Stack equally sized images into an `(N, C, H, W)` batch.
pub fn stack(images: &[&Image]) -> Array4<f64> {
    assert!(!images.is_empty(), "cannot stack an empty batch");
    let (c, h, w) = images[0].pixels.dim();
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (mut slot, img) in out.axis_iter_mut(Axis(0)).zip(images) {
        assert_eq!(img.pixels.dim(), (c, h, w), "images in a batch must share a shape");
        slot.assign(&img.pixels);
    }
    out
}
