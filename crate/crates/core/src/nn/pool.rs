use ndarray::{Array2, Array4, Zip};

/// In-place ReLU.
pub fn relu(mut x: Array4<f64>) -> Array4<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Gradient of ReLU given its output.
pub fn relu_backward(dy: &Array4<f64>, out: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// `(C, N, H, W)` to `(N, C)` spatial mean.
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (c, n, h, w) = x.dim();
    let area = (h * w) as f64;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array2::zeros((n, c));
    for ch in 0..c {
        for b in 0..n {
            let base = (ch * n + b) * h * w;
            out[[b, ch]] = xs[base..base + h * w].iter().sum::<f64>() / area;
        }
    }
    out
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = dy.dim();
    let area = (h * w) as f64;
    let mut dx = Array4::zeros((c, n, h, w));
    let ds = dx.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        for b in 0..n {
            let base = (ch * n + b) * h * w;
            ds[base..base + h * w].fill(dy[[b, ch]] / area);
        }
    }
    dx
}

/// Max pooling with padding treated as `-inf`.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<usize>, (usize, usize, usize, usize))>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let x = x.as_standard_layout();
        let (c, n, h, w) = x.dim();
        let (ho, wo) = self.output_size(h, w);
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array4::zeros((c, n, ho, wo));
        let mut argmax = vec![0usize; c * n * ho * wo];
        let os = out.as_slice_mut().expect("standard layout");
        for plane in 0..c * n {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = base;
                    for ki in 0..self.kernel {
                        let ih = (i * self.stride + ki) as isize - self.padding as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let iw = (j * self.stride + kj) as isize - self.padding as isize;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            let idx = base + ih as usize * w + iw as usize;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * ho + i) * wo + j;
                    os[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        self.cache = if train { Some((argmax, (c, n, h, w))) } else { None };
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let (argmax, shape) = self.cache.take().expect("max-pool backward without a training forward");
        let dy = dy.as_standard_layout();
        let mut dx = Array4::zeros(shape);
        let dxs = dx.as_slice_mut().expect("standard layout");
        for (g, &idx) in dy.iter().zip(&argmax) {
            dxs[idx] += g;
        }
        dx
    }
}
