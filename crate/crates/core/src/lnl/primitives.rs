use ndarray::{Array, Array1, Dimension};
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::config::CoteachingConfig;
use crate::error::{Error, Result};

/// Keep fraction `R(T) = 1 - tau_f * min((T / T_k)^c, 1)`.
pub fn forget_rate(epoch: usize, cfg: &CoteachingConfig) -> f64 {
    let ramp = (epoch as f64 / cfg.warmup_epochs as f64).powf(cfg.exponent).min(1.0);
    1.0 - cfg.forget_rate * ramp
}

/// Number of samples kept out of `n` at keep fraction `r`: `ceil(r n)`,
/// never below one while `r > 0`.
pub fn keep_count(n: usize, r: f64) -> usize {
    // Guard against products like 0.3 * 10 = 3.0000000000000004.
    let k = (r * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.clamp(usize::from(r > 0.0 && n > 0), n)
}

/// Indices of the `ceil(R n)` smallest losses in ascending index order;
/// equal losses prefer the lower index.
pub fn small_loss_select(losses: &[f64], keep_fraction: f64) -> Result<Vec<usize>> {
    if losses.is_empty() {
        return Err(Error::invalid("cannot select from an empty loss vector"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut chosen = order[..keep_count(losses.len(), keep_fraction)].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Two-component 1-D Gaussian mixture fitted to min-max normalized values.
/// Component 0 is the lower-mean ("clean") one.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    /// Posterior of component 0 for each input value.
    pub posteriors: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood at the initial parameters and after every M-step.
    pub trace: Vec<f64>,
}

pub const GMM_TOLERANCE: f64 = 1e-6;
pub const GMM_MAX_ITER: usize = 100;
pub const GMM_VARIANCE_FLOOR: f64 = 1e-6;

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// EM for two 1-D Gaussians.
///
/// Values are min-max normalized first. Means start at the 10th and 90th
/// percentiles, weights at 0.5 and both variances at the sample variance.
/// Iteration stops when the log-likelihood moves less than `1e-6` or after
/// 100 iterations. The fit is deterministic, so no seed is taken.
pub fn fit_gmm_1d(values: &[f64]) -> Result<GmmFit> {
    if values.len() < 2 {
        return Err(Error::invalid("GMM needs at least 2 values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateLosses("non-finite loss value".into()));
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo <= 0.0 {
        return Err(Error::DegenerateLosses(format!("all {} losses equal {lo}", values.len())));
    }
    let x: Vec<f64> = values.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let n = x.len() as f64;
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let mean_all = x.iter().sum::<f64>() / n;
    let var_all = (x.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / (n - 1.0)).max(GMM_VARIANCE_FLOOR);

    let mut means = [percentile(&sorted, 10.0), percentile(&sorted, 90.0)];
    let mut vars = [var_all; 2];
    let mut weights = [0.5, 0.5];
    let mut resp = vec![0.0; x.len()];

    let e_step = |means: &[f64; 2], vars: &[f64; 2], weights: &[f64; 2], resp: &mut [f64]| -> f64 {
        let mut ll = 0.0;
        for (r, &v) in resp.iter_mut().zip(&x) {
            let a = weights[0].ln() + log_normal(v, means[0], vars[0]);
            let b = weights[1].ln() + log_normal(v, means[1], vars[1]);
            let total = log_sum_exp(a, b);
            *r = (a - total).exp();
            ll += total;
        }
        ll
    };

    let mut ll = e_step(&means, &vars, &weights, &mut resp);
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < GMM_MAX_ITER {
        iterations += 1;
        let r0: f64 = resp.iter().sum();
        let r1 = n - r0;
        // An emptied component keeps its parameters; its weight goes to zero.
        if r0 > 0.0 {
            means[0] = resp.iter().zip(&x).map(|(r, v)| r * v).sum::<f64>() / r0;
            vars[0] = (resp.iter().zip(&x).map(|(r, v)| r * (v - means[0]).powi(2)).sum::<f64>() / r0)
                .max(GMM_VARIANCE_FLOOR);
        }
        if r1 > 0.0 {
            means[1] = resp.iter().zip(&x).map(|(r, v)| (1.0 - r) * v).sum::<f64>() / r1;
            vars[1] = (resp.iter().zip(&x).map(|(r, v)| (1.0 - r) * (v - means[1]).powi(2)).sum::<f64>() / r1)
                .max(GMM_VARIANCE_FLOOR);
        }
        weights = [r0 / n, r1 / n];
        let next = e_step(&means, &vars, &weights, &mut resp);
        trace.push(next);
        let done = (next - ll).abs() < GMM_TOLERANCE;
        ll = next;
        if done {
            break;
        }
    }
    if means[1] < means[0] {
        means.swap(0, 1);
        vars.swap(0, 1);
        weights.swap(0, 1);
        resp.iter_mut().for_each(|r| *r = 1.0 - *r);
    }
    Ok(GmmFit {
        means,
        variances: vars,
        weights,
        posteriors: resp,
        iterations,
        log_likelihood: ll,
        trace,
    })
}

/// `p_i^(1/T)` renormalized.
pub fn sharpen(dist: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("sharpening temperature must be positive"));
    }
    if dist.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::invalid("distribution entries must be finite and non-negative"));
    }
    let max = dist.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::invalid("cannot sharpen an all-zero distribution"));
    }
    // Scaling by the max first keeps p^(1/T) away from underflow.
    let powered: Vec<f64> = dist.iter().map(|&p| (p / max).powf(1.0 / temperature)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| p / total).collect())
}

/// `lambda ~ Beta(alpha, alpha)` folded onto `[0.5, 1]`.
pub fn sample_mix_weight<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("mixup alpha {alpha}: {e}")))?;
    let lambda: f64 = beta.sample(rng);
    Ok(lambda.max(1.0 - lambda))
}

/// Convex combination with weight `max(lambda, 1 - lambda)` on the first
/// argument.
pub fn mixup_with_lambda<D: Dimension>(
    x1: &Array<f64, D>,
    p1: &Array1<f64>,
    x2: &Array<f64, D>,
    p2: &Array1<f64>,
    lambda: f64,
) -> Result<(Array<f64, D>, Array1<f64>, f64)> {
    if x1.shape() != x2.shape() || p1.len() != p2.len() {
        return Err(Error::ShapeMismatch {
            name: "mixup inputs".into(),
            expected: x1.shape().to_vec(),
            found: x2.shape().to_vec(),
        });
    }
    let l = lambda.max(1.0 - lambda);
    Ok((x1 * l + x2 * (1.0 - l), p1 * l + p2 * (1.0 - l), l))
}

pub fn mixup<D: Dimension, R: Rng + ?Sized>(
    x1: &Array<f64, D>,
    p1: &Array1<f64>,
    x2: &Array<f64, D>,
    p2: &Array1<f64>,
    alpha: f64,
    rng: &mut R,
) -> Result<(Array<f64, D>, Array1<f64>, f64)> {
    let l = sample_mix_weight(alpha, rng)?;
    mixup_with_lambda(x1, p1, x2, p2, l)
}

/// `sharpen(w y + (1 - w) p_mean, T)`.
pub fn co_refine(observed: &[f64], clean_posterior: f64, mean_prediction: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&clean_posterior) {
        return Err(Error::invalid(format!("clean posterior {clean_posterior} outside [0, 1]")));
    }
    if observed.len() != mean_prediction.len() {
        return Err(Error::invalid("label and prediction widths differ"));
    }
    let blended: Vec<f64> = observed
        .iter()
        .zip(mean_prediction)
        .map(|(y, p)| clean_posterior * y + (1.0 - clean_posterior) * p)
        .collect();
    sharpen(&blended, temperature)
}

/// Average all predictions of both networks, then sharpen.
pub fn co_guess(preds_a: &[Vec<f64>], preds_b: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    let all: Vec<&Vec<f64>> = preds_a.iter().chain(preds_b).collect();
    let Some(first) = all.first() else {
        return Err(Error::invalid("co-guessing needs at least one prediction"));
    };
    let k = first.len();
    if all.iter().any(|p| p.len() != k) {
        return Err(Error::invalid("prediction widths differ"));
    }
    let mut mean = vec![0.0; k];
    for p in &all {
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= all.len() as f64);
    sharpen(&mean, temperature)
}
