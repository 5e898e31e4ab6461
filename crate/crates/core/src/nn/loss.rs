use ndarray::{Array2, ArrayView2, Axis};

pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub fn log_softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn argmax_rows(x: ArrayView2<'_, f64>) -> Vec<usize> {
    x.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Per-sample `-log softmax(logits)[label]`.
pub fn per_sample_cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Vec<f64> {
    let ls = log_softmax(logits);
    labels.iter().enumerate().map(|(i, &y)| -ls[[i, y]]).collect()
}

/// Cross-entropy averaged over rows with non-zero `weights`.
///
/// Returns the loss and its gradient with respect to the logits. Rows with
/// zero weight receive an exactly-zero gradient.
pub fn weighted_cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize], weights: &[f64]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), labels.len());
    assert_eq!(labels.len(), weights.len());
    let total: f64 = weights.iter().sum();
    let mut grad = softmax(logits);
    if total <= 0.0 {
        grad.fill(0.0);
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        let mut row = grad.row_mut(i);
        if w == 0.0 {
            row.fill(0.0);
            continue;
        }
        loss -= w * row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row *= w / total;
    }
    (loss / total, grad)
}

pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let ones = vec![1.0; labels.len()];
    weighted_cross_entropy(logits, labels, &ones)
}

/// `-mean_i sum_k t_ik log softmax(z_i)_k` for soft targets.
pub fn soft_cross_entropy(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let ls = log_softmax(logits);
    let loss = -(&ls * &targets).sum() / n;
    let mut grad = ls.mapv(f64::exp);
    for (mut g, t) in grad.axis_iter_mut(Axis(0)).zip(targets.axis_iter(Axis(0))) {
        let mass = t.sum();
        g *= mass;
        g -= &t;
        g /= n;
    }
    (loss, grad)
}

/// Mean squared error between `softmax(logits)` and `targets`, averaged over
/// every element.
pub fn probability_mse(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let p = softmax(logits);
    let diff = &p - &targets;
    let count = diff.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() / count;
    let dp = diff.mapv(|d| 2.0 * d / count);
    let mut grad = Array2::zeros(p.raw_dim());
    for i in 0..p.nrows() {
        let dot: f64 = p.row(i).iter().zip(dp.row(i)).map(|(a, b)| a * b).sum();
        for k in 0..p.ncols() {
            grad[[i, k]] = p[[i, k]] * (dp[[i, k]] - dot);
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn check_grad(f: impl Fn(ArrayView2<'_, f64>) -> (f64, Array2<f64>), z: Array2<f64>) {
        let (_, g) = f(z.view());
        let eps = 1e-6;
        for i in 0..z.nrows() {
            for k in 0..z.ncols() {
                let mut zp = z.clone();
                zp[[i, k]] += eps;
                let mut zm = z.clone();
                zm[[i, k]] -= eps;
                let fd = (f(zp.view()).0 - f(zm.view()).0) / (2.0 * eps);
                assert!((fd - g[[i, k]]).abs() < 1e-7, "({i},{k}) {fd} vs {}", g[[i, k]]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let z = array![[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let t = array![[0.2, 0.7, 0.1], [0.5, 0.25, 0.25]];
        check_grad(|z| cross_entropy(z, &[2, 0]), z.clone());
        check_grad(|z| weighted_cross_entropy(z, &[2, 0], &[0.0, 1.0]), z.clone());
        check_grad(|z| soft_cross_entropy(z, t.view()), z.clone());
        check_grad(|z| probability_mse(z, t.view()), z);
    }

    #[test]
    fn zero_weight_rows_get_zero_gradient() {
        let z = array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.0]];
        let (_, g) = weighted_cross_entropy(z.view(), &[0, 1, 1], &[1.0, 0.0, 1.0]);
        assert!(g.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = array![[1000.0, 1001.0], [-5.0, 3.0]];
        let p = softmax(z.view());
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
