//! 2-D convolution over channel-major activations.
//!
//! Activations are laid out `(C, N, H, W)` so the GEMM output of one
//! im2col chunk is already in place for every output channel. The batch is
//! processed in chunks of samples to keep the column buffer cache-sized; the
//! column buffer is rebuilt in the backward pass instead of being stored.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array4, ArrayView2, ArrayViewMut2, ShapeBuilder};
use rand::Rng;

use super::param::{join, Param, Visit};

const TARGET_COLUMNS: usize = 2048;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<Array4<f64>>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Range of output columns whose input column `ow*s + kj - p` is in bounds.
    fn valid_range(&self, kj: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < out_len && (lo * self.s + kj) < self.p {
            lo += 1;
        }
        let mut hi = out_len;
        while hi > lo && (hi - 1) * self.s + kj >= self.p + in_len {
            hi -= 1;
        }
        (lo, hi)
    }
}

fn im2col(x: &[f64], g: &Geometry, n0: usize, n1: usize, cols: &mut [f64]) {
    let len = (n1 - n0) * g.plane();
    let (ow_lo_hi, oh_lo_hi): (Vec<_>, Vec<_>) = (0..g.k)
        .map(|kk| (g.valid_range(kk, g.wo, g.w), g.valid_range(kk, g.ho, g.h)))
        .unzip();
    for ci in 0..g.c {
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = oh_lo_hi[ki];
            for kj in 0..g.k {
                let (ow_lo, ow_hi) = ow_lo_hi[kj];
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * len..(row + 1) * len];
                for ni in n0..n1 {
                    let plane = &mut dst[(ni - n0) * g.plane()..(ni - n0 + 1) * g.plane()];
                    let src = &x[(ci * g.n + ni) * g.h * g.w..(ci * g.n + ni + 1) * g.h * g.w];
                    for oh in 0..g.ho {
                        let out_row = &mut plane[oh * g.wo..(oh + 1) * g.wo];
                        if oh < oh_lo || oh >= oh_hi {
                            out_row.fill(0.0);
                            continue;
                        }
                        let ih = oh * g.s + ki - g.p;
                        let in_row = &src[ih * g.w..(ih + 1) * g.w];
                        out_row[..ow_lo].fill(0.0);
                        out_row[ow_hi..].fill(0.0);
                        if g.s == 1 {
                            let start = ow_lo + kj - g.p;
                            out_row[ow_lo..ow_hi].copy_from_slice(&in_row[start..start + ow_hi - ow_lo]);
                        } else {
                            for ow in ow_lo..ow_hi {
                                out_row[ow] = in_row[ow * g.s + kj - g.p];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, n0: usize, n1: usize, dx: &mut [f64]) {
    let len = (n1 - n0) * g.plane();
    for ci in 0..g.c {
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = g.valid_range(ki, g.ho, g.h);
            for kj in 0..g.k {
                let (ow_lo, ow_hi) = g.valid_range(kj, g.wo, g.w);
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * len..(row + 1) * len];
                for ni in n0..n1 {
                    let plane = &src[(ni - n0) * g.plane()..(ni - n0 + 1) * g.plane()];
                    let base = (ci * g.n + ni) * g.h * g.w;
                    for oh in oh_lo..oh_hi {
                        let ih = oh * g.s + ki - g.p;
                        let dst = &mut dx[base + ih * g.w..base + (ih + 1) * g.w];
                        let col_row = &plane[oh * g.wo..(oh + 1) * g.wo];
                        for ow in ow_lo..ow_hi {
                            dst[ow * g.s + kj - g.p] += col_row[ow];
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Param::he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn geometry(&self, x: &Array4<f64>) -> Geometry {
        let (c, n, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(h, w);
        Geometry {
            c,
            n,
            h,
            w,
            k: self.kernel,
            s: self.stride,
            p: self.padding,
            ho,
            wo,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let rows = self.in_channels * self.kernel * self.kernel;
        ArrayView2::from_shape((self.out_channels, rows), self.weight.value.as_slice().expect("contiguous"))
            .expect("weight shape")
    }

    fn chunk(&self, g: &Geometry) -> usize {
        (TARGET_COLUMNS / g.plane().max(1)).clamp(1, g.n.max(1))
    }

    /// `x` is `(C, N, H, W)`; returns `(C_out, N, H_out, W_out)`.
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let x = x.as_standard_layout().into_owned();
        let g = self.geometry(&x);
        let mut out = Array4::<f64>::zeros((self.out_channels, g.n, g.ho, g.wo));
        let xs = x.as_slice().expect("standard layout");
        let chunk = self.chunk(&g);
        let mut cols = vec![0.0; g.rows() * chunk * g.plane()];
        let total = g.n * g.plane();
        let w = self.weight_matrix();
        let out_slice = out.as_slice_mut().expect("standard layout");
        let mut n0 = 0;
        while n0 < g.n {
            let n1 = (n0 + chunk).min(g.n);
            let len = (n1 - n0) * g.plane();
            im2col(xs, &g, n0, n1, &mut cols[..g.rows() * len]);
            let cv = ArrayView2::from_shape((g.rows(), len), &cols[..g.rows() * len]).expect("cols");
            let mut ov = ArrayViewMut2::from_shape(
                (self.out_channels, len).strides((total, 1)),
                &mut out_slice[n0 * g.plane()..],
            )
            .expect("output view");
            general_mat_mul(1.0, &w, &cv, 0.0, &mut ov);
            n0 = n1;
        }
        self.input = if train { Some(x) } else { None };
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let x = self.input.take().expect("conv backward without a training forward");
        let g = self.geometry(&x);
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");
        let mut dx = Array4::<f64>::zeros((g.c, g.n, g.h, g.w));
        let chunk = self.chunk(&g);
        let mut cols = vec![0.0; g.rows() * chunk * g.plane()];
        let mut dcols = vec![0.0; g.rows() * chunk * g.plane()];
        let total = g.n * g.plane();
        let rows = g.rows();
        let mut dw = std::mem::take(&mut self.weight.grad);
        {
            let w = self.weight_matrix();
            let mut dwv = ArrayViewMut2::from_shape((self.out_channels, rows), dw.as_slice_mut().expect("grad"))
                .expect("grad shape");
            let dxs = dx.as_slice_mut().expect("standard layout");
            let mut n0 = 0;
            while n0 < g.n {
                let n1 = (n0 + chunk).min(g.n);
                let len = (n1 - n0) * g.plane();
                im2col(xs, &g, n0, n1, &mut cols[..rows * len]);
                let cv = ArrayView2::from_shape((rows, len), &cols[..rows * len]).expect("cols");
                let dyv = ArrayView2::from_shape((self.out_channels, len).strides((total, 1)), &dys[n0 * g.plane()..])
                    .expect("dy view");
                general_mat_mul(1.0, &dyv, &cv.t(), 1.0, &mut dwv);
                let mut dcv = ArrayViewMut2::from_shape((rows, len), &mut dcols[..rows * len]).expect("dcols");
                general_mat_mul(1.0, &w.t(), &dyv, 0.0, &mut dcv);
                col2im(&dcols[..rows * len], &g, n0, n1, dxs);
                n0 = n1;
            }
        }
        self.weight.grad = dw;
        dx
    }
}

impl Visit for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    /// Direct nested-loop convolution on `(C, N, H, W)` tensors.
    fn naive_conv(x: &Array4<f64>, w: &ndarray::ArrayD<f64>, stride: usize, pad: usize) -> Array4<f64> {
        let (c, n, h, wd) = x.dim();
        let (co, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Array4::zeros((co, n, ho, wo));
        for o in 0..co {
            for b in 0..n {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ih = (i * stride + ki) as isize - pad as isize;
                                    let iw = (j * stride + kj) as isize - pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                        acc += x[[ci, b, ih as usize, iw as usize]] * w[[o, ci, ki, kj]];
                                    }
                                }
                            }
                        }
                        out[[o, b, i, j]] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut r = seed::rng(seed);
        Array4::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_naive_convolution() {
        for &(k, s, p, h) in &[(3, 1, 1, 7), (3, 2, 1, 8), (1, 2, 0, 6), (7, 2, 3, 9), (3, 1, 0, 5)] {
            let mut conv = Conv2d::new(3, 4, k, s, p, &mut seed::rng(3));
            let x = random_tensor((3, 5, h, h + 1), 11);
            let got = conv.forward(&x, false);
            let want = naive_conv(&x, &conv.weight.value, s, p);
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, &mut seed::rng(5));
        let x = random_tensor((2, 3, 6, 5), 9);
        let upstream = random_tensor((3, 3, 3, 3), 10);
        let loss = |c: &mut Conv2d, x: &Array4<f64>| (c.forward(x, false) * &upstream).sum();
        conv.zero_grad();
        conv.forward(&x, true);
        let dx = conv.backward(&upstream);
        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [1, 2, 5, 4], [0, 1, 3, 2]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * eps);
            assert!((fd - dx[idx]).abs() < 1e-6, "dx {idx:?}: {fd} vs {}", dx[idx]);
        }
        let grad = conv.weight.grad.clone();
        for flat in [0usize, 7, 20, 53] {
            let mut c2 = conv.clone();
            c2.weight.value.as_slice_mut().unwrap()[flat] += eps;
            let lp = loss(&mut c2, &x);
            c2.weight.value.as_slice_mut().unwrap()[flat] -= 2.0 * eps;
            let lm = loss(&mut c2, &x);
            let fd = (lp - lm) / (2.0 * eps);
            let g = grad.as_slice().unwrap()[flat];
            assert!((fd - g).abs() < 1e-6, "dw[{flat}]: {fd} vs {g}");
        }
    }
}
