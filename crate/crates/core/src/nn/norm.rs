use ndarray::{Array4, ArrayD, IxDyn};

use super::param::{join, Param, Visit};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over `(C, N, H, W)` activations.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Array4<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(ArrayD::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer(ArrayD::ones(IxDyn(&[channels]))),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let x = x.as_standard_layout();
        let (c, n, h, w) = x.dim();
        let m = n * h * w;
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array4::<f64>::zeros((c, n, h, w));
        let os = out.as_slice_mut().expect("standard layout");
        let gamma = self.gamma.value.as_slice().expect("gamma");
        let beta = self.beta.value.as_slice().expect("beta");
        if train {
            let mut xhat = Array4::<f64>::zeros((c, n, h, w));
            let xh = xhat.as_slice_mut().expect("standard layout");
            let mut inv_std = vec![0.0; c];
            let rm = self.running_mean.value.as_slice_mut().expect("running mean");
            let rv = self.running_var.value.as_slice_mut().expect("running var");
            for ch in 0..c {
                let seg = &xs[ch * m..(ch + 1) * m];
                let mean = seg.iter().sum::<f64>() / m as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                let istd = 1.0 / (var + BN_EPS).sqrt();
                inv_std[ch] = istd;
                for i in 0..m {
                    let z = (seg[i] - mean) * istd;
                    xh[ch * m + i] = z;
                    os[ch * m + i] = gamma[ch] * z + beta[ch];
                }
                let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
                rm[ch] = (1.0 - BN_MOMENTUM) * rm[ch] + BN_MOMENTUM * mean;
                rv[ch] = (1.0 - BN_MOMENTUM) * rv[ch] + BN_MOMENTUM * unbiased;
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            let rm = self.running_mean.value.as_slice().expect("running mean");
            let rv = self.running_var.value.as_slice().expect("running var");
            for ch in 0..c {
                let istd = 1.0 / (rv[ch] + BN_EPS).sqrt();
                let scale = gamma[ch] * istd;
                let shift = beta[ch] - rm[ch] * scale;
                for i in ch * m..(ch + 1) * m {
                    os[i] = xs[i] * scale + shift;
                }
            }
            self.cache = None;
        }
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("batch-norm backward without a training forward");
        let dy = dy.as_standard_layout();
        let (c, n, h, w) = dy.dim();
        let m = n * h * w;
        let ds = dy.as_slice().expect("standard layout");
        let xh = cache.xhat.as_slice().expect("standard layout");
        let gamma = self.gamma.value.as_slice().expect("gamma");
        let dgamma = self.gamma.grad.as_slice_mut().expect("gamma grad");
        let dbeta = self.beta.grad.as_slice_mut().expect("beta grad");
        let mut dx = Array4::<f64>::zeros((c, n, h, w));
        let dxs = dx.as_slice_mut().expect("standard layout");
        for ch in 0..c {
            let seg_dy = &ds[ch * m..(ch + 1) * m];
            let seg_xh = &xh[ch * m..(ch + 1) * m];
            let sum_dy: f64 = seg_dy.iter().sum();
            let sum_dy_xh: f64 = seg_dy.iter().zip(seg_xh).map(|(a, b)| a * b).sum();
            dgamma[ch] += sum_dy_xh;
            dbeta[ch] += sum_dy;
            let k = gamma[ch] * cache.inv_std[ch] / m as f64;
            for i in 0..m {
                dxs[ch * m + i] = k * (m as f64 * seg_dy[i] - sum_dy - seg_xh[i] * sum_dy_xh);
            }
        }
        dx
    }
}

impl Visit for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.gamma);
        f(&join(prefix, "bias"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn train_output_is_normalized_per_channel() {
        let mut r = seed::rng(1);
        let x = Array4::from_shape_fn((3, 4, 2, 2), |_| r.random_range(-3.0..5.0));
        let mut bn = BatchNorm2d::new(3);
        let y = bn.forward(&x, true);
        for ch in 0..3 {
            let seg = y.index_axis(ndarray::Axis(0), ch);
            let mean = seg.mean().unwrap();
            let var = seg.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = seed::rng(2);
        let x = Array4::from_shape_fn((2, 3, 2, 2), |_| r.random_range(-1.0..1.0));
        let up = Array4::from_shape_fn((2, 3, 2, 2), |_| r.random_range(-1.0..1.0));
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value[[0]] = 1.5;
        bn.beta.value[[1]] = -0.3;
        let loss = |x: &Array4<f64>| {
            let mut b = bn.clone();
            (b.forward(x, true) * &up).sum()
        };
        let eps = 1e-6;
        let mut fds = vec![];
        for idx in [[0, 0, 0, 0], [1, 2, 1, 1], [0, 1, 1, 0]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            fds.push((idx, (loss(&xp) - loss(&xm)) / (2.0 * eps)));
        }
        bn.forward(&x, true);
        let dx = bn.backward(&up);
        for (idx, fd) in fds {
            assert!((fd - dx[idx]).abs() < 1e-6, "{idx:?}: {fd} vs {}", dx[idx]);
        }
    }
}
