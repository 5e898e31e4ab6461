use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Contrastive temperature used when none is configured.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Normalized-temperature cross-entropy over `2N` embeddings laid out as
/// `[a_1..a_N, b_1..b_N]`; the positive of row `i` is row `(i + N) mod 2N`.
///
/// Returns the mean loss over all `2N` anchors and its gradient with respect
/// to the raw (unnormalized) embeddings.
pub fn nt_xent_loss(z: ArrayView2<'_, f64>, temperature: f64) -> Result<(f64, Array2<f64>)> {
    let rows = z.nrows();
    if !rows.is_multiple_of(2) {
        return Err(Error::invalid(format!("expected an even number of embeddings, got {rows}")));
    }
    let n = rows / 2;
    if n < 2 {
        return Err(Error::invalid("NT-Xent needs at least 2 pairs so that negatives exist"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let norms: Array1<f64> = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let u = &z / &norms.view().insert_axis(Axis(1));
    let sim = u.dot(&u.t()) / temperature;

    let mut loss = 0.0;
    // coef[i][k] = dL/dsim[i][k] for the ordered pair (anchor i, other k).
    let mut coef = Array2::<f64>::zeros((rows, rows));
    for i in 0..rows {
        let pos = (i + n) % rows;
        let max = (0..rows).filter(|&k| k != i).map(|k| sim[[i, k]]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..rows).filter(|&k| k != i).map(|k| (sim[[i, k]] - max).exp()).sum();
        loss += -(sim[[i, pos]] - max) + denom.ln();
        for k in (0..rows).filter(|&k| k != i) {
            let p = (sim[[i, k]] - max).exp() / denom;
            coef[[i, k]] = (p - if k == pos { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    loss /= rows as f64;

    let sym = (&coef + &coef.t()) / temperature;
    let du = sym.dot(&u);
    let mut grad = Array2::<f64>::zeros((rows, z.ncols()));
    for i in 0..rows {
        let ui = u.row(i);
        let dui = du.row(i);
        let proj = ui.dot(&dui);
        let g = (&dui - &(&ui * proj)) / norms[i];
        grad.row_mut(i).assign(&g);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn identical_embeddings_give_log_three() {
        let z = Array2::from_elem((4, 3), 0.7);
        for tau in [0.07, 0.5, 2.0] {
            let (l, _) = nt_xent_loss(z.view(), tau).unwrap();
            assert!((l - 3f64.ln()).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn scale_invariance_and_errors() {
        let mut r = seed::rng(3);
        let z = Array2::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
        let (l, _) = nt_xent_loss(z.view(), 0.3).unwrap();
        let mut scaled = z.clone();
        scaled.row_mut(2).mapv_inplace(|v| v * 7.5);
        let (l2, _) = nt_xent_loss(scaled.view(), 0.3).unwrap();
        assert!((l - l2).abs() < 1e-12);
        assert!(nt_xent_loss(z.slice(ndarray::s![..2, ..]), 0.3).is_err());
        assert!(nt_xent_loss(z.view(), 0.0).is_err());
        assert!(nt_xent_loss(z.slice(ndarray::s![..5, ..]), 0.3).is_err());
    }

    #[test]
    fn closer_positive_lowers_loss() {
        // b_1 rotates in the e1/e3 plane, so only its similarity to a_1 moves.
        let batch = |theta: f64| {
            ndarray::array![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [theta.cos(), 0.0, theta.sin()],
                [0.0, 1.0, 0.0]
            ]
        };
        let mut prev = f64::INFINITY;
        for step in (0..=6).rev() {
            let (l, _) = nt_xent_loss(batch(step as f64 * 0.25).view(), 0.5).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }
}
