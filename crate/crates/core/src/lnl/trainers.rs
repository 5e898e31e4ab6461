use ndarray::{concatenate, s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::{CoteachingConfig, DivideMixConfig, TrainConfig};
use super::primitives::{co_guess, co_refine, fit_gmm_1d, forget_rate, keep_count, sample_mix_weight, small_loss_select};
use crate::data::{stack, DatasetSplit, Image, TrainerView};
use crate::error::{Error, Result};
use crate::eval::{EpochMetrics, GmmSummary, Monitor};
use crate::model::Model;
use crate::nn::{loss, Optimizer, Visit};
use crate::pretext::AugmentationPipeline;
use crate::seed;

/// Everything a trainer produces besides the updated model(s).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    /// Per-epoch selected-as-clean mask of network A; `None` for epochs
    /// without selection.
    pub masks: Vec<Option<Vec<bool>>>,
    pub warnings: Vec<String>,
}

/// One Co-teaching mini-batch as seen by the instrumentation hook.
/// Indices are positions in the training split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoteachingStep {
    pub epoch: usize,
    pub batch: Vec<usize>,
    pub selected_by_a: Vec<usize>,
    pub selected_by_b: Vec<usize>,
    /// Samples that carried non-zero loss weight in network A's update.
    pub updated_a: Vec<usize>,
    pub updated_b: Vec<usize>,
}

fn epoch_order(n: usize, root: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive_indexed(root, "epoch-order", epoch as u64)));
    order
}

/// Augment and stack the images at `indices`; sample `i` draws from
/// `derive_indexed(seed, "augment", i)`.
fn augmented_batch(view: &TrainerView<'_>, indices: &[usize], pipeline: &AugmentationPipeline, seed: u64) -> Array4<f64> {
    if pipeline.ops.is_empty() {
        return stack(&view.images(indices));
    }
    let images: Vec<Image> = indices
        .par_iter()
        .map(|&i| pipeline.apply(view.image(i), seed::derive_indexed(seed, "augment", i as u64)))
        .collect();
    stack(&images.iter().collect::<Vec<_>>())
}

fn check_inputs(view: &TrainerView<'_>, model: &Model) -> Result<()> {
    if view.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let out = model.head_kind().outputs();
    if out != view.num_classes() {
        return Err(Error::invalid(format!(
            "model predicts {out} classes but the split has {}",
            view.num_classes()
        )));
    }
    Ok(())
}

fn ce_epoch(
    model: &mut Model,
    opt: &mut Optimizer,
    view: &TrainerView<'_>,
    cfg: &TrainConfig,
    batch_size: usize,
    epoch: usize,
    root: u64,
) {
    let lr = cfg.lr_at(epoch);
    let aug_seed = seed::derive_indexed(root, "epoch-augment", epoch as u64);
    for batch in epoch_order(view.len(), root, epoch).chunks(batch_size) {
        let x = augmented_batch(view, batch, &cfg.augmentation, aug_seed);
        let labels: Vec<usize> = batch.iter().map(|&i| view.observed_label(i)).collect();
        model.zero_grad();
        let logits = model.forward(&x, true);
        let (_, grad) = loss::cross_entropy(logits.view(), &labels);
        model.backward(&grad);
        opt.step(model, lr);
    }
}

/// Plain cross-entropy on the observed labels.
pub fn train_cross_entropy(
    model: &mut Model,
    train: &DatasetSplit,
    test: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let view = train.trainer_view();
    check_inputs(&view, model)?;
    let monitor = Monitor::new(train, test);
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut out = TrainOutcome::default();
    for epoch in 0..cfg.epochs {
        ce_epoch(model, &mut opt, &view, cfg, cfg.batch_size, epoch, cfg.seed);
        out.metrics.push(monitor.evaluate(model, epoch, None, None)?);
        out.masks.push(None);
        log::info!("ce epoch {epoch}: test acc {:.4}", out.metrics[epoch].test_acc);
    }
    Ok(out)
}

pub fn train_coteaching(
    model_a: &mut Model,
    model_b: &mut Model,
    train: &DatasetSplit,
    test: &DatasetSplit,
    cfg: &TrainConfig,
    ct: &CoteachingConfig,
) -> Result<TrainOutcome> {
    train_coteaching_observed(model_a, model_b, train, test, cfg, ct, &mut |_| {})
}

/// Co-teaching with a hook that sees every mini-batch exchange.
///
/// Epoch `e` (zero-based) uses keep fraction `R(e + 1)`, so the ramp
/// reaches `1 - tau_f` on epoch `T_k`.
pub fn train_coteaching_observed(
    model_a: &mut Model,
    model_b: &mut Model,
    train: &DatasetSplit,
    test: &DatasetSplit,
    cfg: &TrainConfig,
    ct: &CoteachingConfig,
    observer: &mut dyn FnMut(&CoteachingStep),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ct.validate()?;
    let view = train.trainer_view();
    check_inputs(&view, model_a)?;
    check_inputs(&view, model_b)?;
    let mut out = TrainOutcome::default();
    if model_a.parameter_hash() == model_b.parameter_hash() {
        let msg = "co-teaching networks start from identical parameters; their selections will agree".to_string();
        log::warn!("{msg}");
        out.warnings.push(msg);
    }
    let monitor = Monitor::new(train, test);
    let mut opt_a = Optimizer::new(cfg.optimizer);
    let mut opt_b = Optimizer::new(cfg.optimizer);
    for epoch in 0..cfg.epochs {
        let keep = forget_rate(epoch + 1, ct);
        let lr = cfg.lr_at(epoch);
        let aug_seed = seed::derive_indexed(cfg.seed, "epoch-augment", epoch as u64);
        let mut mask = vec![false; view.len()];
        for batch in epoch_order(view.len(), cfg.seed, epoch).chunks(cfg.batch_size) {
            let x = augmented_batch(&view, batch, &cfg.augmentation, aug_seed);
            let labels: Vec<usize> = batch.iter().map(|&i| view.observed_label(i)).collect();
            model_a.zero_grad();
            model_b.zero_grad();
            let logits_a = model_a.forward(&x, true);
            let logits_b = model_b.forward(&x, true);
            let sel_a = small_loss_select(&loss::per_sample_cross_entropy(logits_a.view(), &labels), keep)?;
            let sel_b = small_loss_select(&loss::per_sample_cross_entropy(logits_b.view(), &labels), keep)?;
            debug_assert_eq!(sel_a.len(), keep_count(batch.len(), keep));
            let weights = |sel: &[usize]| {
                let mut w = vec![0.0; batch.len()];
                sel.iter().for_each(|&j| w[j] = 1.0);
                w
            };
            // Each network learns from the samples its peer considers clean.
            let w_a = weights(&sel_b);
            let w_b = weights(&sel_a);
            let (_, grad_a) = loss::weighted_cross_entropy(logits_a.view(), &labels, &w_a);
            let (_, grad_b) = loss::weighted_cross_entropy(logits_b.view(), &labels, &w_b);
            model_a.backward(&grad_a);
            model_b.backward(&grad_b);
            opt_a.step(model_a, lr);
            opt_b.step(model_b, lr);
            for &j in &sel_a {
                mask[batch[j]] = true;
            }
            let global = |sel: &[usize]| sel.iter().map(|&j| batch[j]).collect::<Vec<_>>();
            let nonzero = |w: &[f64]| (0..w.len()).filter(|&j| w[j] != 0.0).map(|j| batch[j]).collect::<Vec<_>>();
            observer(&CoteachingStep {
                epoch,
                batch: batch.to_vec(),
                selected_by_a: global(&sel_a),
                selected_by_b: global(&sel_b),
                updated_a: nonzero(&w_a),
                updated_b: nonzero(&w_b),
            });
        }
        let m = monitor.evaluate_pair(model_a, model_b, epoch, Some(&mask), None)?;
        log::info!(
            "co-teaching epoch {epoch}: keep {keep:.3}, test acc {:.4}, precision {:?}",
            m.test_acc,
            m.selection_precision
        );
        out.metrics.push(m);
        out.masks.push(Some(mask));
    }
    Ok(out)
}

/// Clean posteriors from one network's per-sample losses. A degenerate
/// loss distribution marks every sample clean.
fn divide(model: &mut Model, view: &TrainerView<'_>) -> Result<(Vec<f64>, Option<GmmSummary>)> {
    let losses = model.per_sample_loss(&view.all_images(), &view.observed_labels(), 256);
    match fit_gmm_1d(&losses) {
        Ok(fit) => Ok((
            fit.posteriors,
            Some(GmmSummary {
                means: fit.means,
                weights: fit.weights,
            }),
        )),
        Err(Error::DegenerateLosses(msg)) => {
            log::warn!("GMM degenerate ({msg}); treating every sample as labeled");
            Ok((vec![1.0; view.len()], None))
        }
        Err(e) => Err(e),
    }
}

fn one_hot(label: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}

fn rows_to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let k = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), k), |(i, j)| rows[i][j])
}

#[allow(clippy::too_many_arguments)]
fn dividemix_epoch(
    net: &mut Model,
    peer: &mut Model,
    opt: &mut Optimizer,
    view: &TrainerView<'_>,
    posteriors: &[f64],
    cfg: &TrainConfig,
    dm: &DivideMixConfig,
    lr: f64,
    root: u64,
    include_unlabeled: bool,
) -> Result<()> {
    let k = view.num_classes();
    let mut labeled: Vec<usize> = (0..view.len()).filter(|&i| posteriors[i] >= dm.clean_threshold).collect();
    let mut weights = posteriors.to_vec();
    if labeled.is_empty() {
        log::warn!("GMM selected no labeled samples; using every sample as labeled");
        labeled = (0..view.len()).collect();
        weights = vec![1.0; view.len()];
    }
    let mut unlabeled: Vec<usize> = (0..view.len()).filter(|&i| weights[i] < dm.clean_threshold).collect();
    let mut rng = seed::rng_for(root, "dividemix-order");
    labeled.shuffle(&mut rng);
    unlabeled.shuffle(&mut rng);
    let mut cursor = 0usize;

    for (bi, lab) in labeled.chunks(dm.batch_size).enumerate() {
        let batch_seed = seed::derive_indexed(root, "dividemix-batch", bi as u64);
        let unl: Vec<usize> = if unlabeled.is_empty() {
            Vec::new()
        } else {
            (0..lab.len())
                .map(|_| {
                    let i = unlabeled[cursor % unlabeled.len()];
                    cursor += 1;
                    i
                })
                .collect()
        };
        let views = |idx: &[usize], tag: &str| -> Vec<Array4<f64>> {
            (0..dm.augmentations)
                .map(|m| augmented_batch(view, idx, &cfg.augmentation, seed::derive_indexed(batch_seed, tag, m as u64)))
                .collect()
        };
        let xl = views(lab, "labeled");
        let xu = if unl.is_empty() { Vec::new() } else { views(&unl, "unlabeled") };

        // Co-refinement of the labeled targets.
        let mut mean_pred = Array2::<f64>::zeros((lab.len(), k));
        for x in &xl {
            mean_pred += &loss::softmax(net.forward(x, false).view());
        }
        mean_pred /= dm.augmentations as f64;
        let lab_targets = lab
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                co_refine(
                    &one_hot(view.observed_label(i), k),
                    weights[i].clamp(0.0, 1.0),
                    mean_pred.row(r).as_slice().expect("contiguous"),
                    dm.sharpen_temperature,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        // Co-guessing for the unlabeled targets.
        let unl_targets = if unl.is_empty() {
            Vec::new()
        } else {
            let preds_net: Vec<Array2<f64>> = xu.iter().map(|x| loss::softmax(net.forward(x, false).view())).collect();
            let preds_peer: Vec<Array2<f64>> = xu.iter().map(|x| loss::softmax(peer.forward(x, false).view())).collect();
            (0..unl.len())
                .map(|r| {
                    let a: Vec<Vec<f64>> = preds_net.iter().map(|p| p.row(r).to_vec()).collect();
                    let b: Vec<Vec<f64>> = preds_peer.iter().map(|p| p.row(r).to_vec()).collect();
                    co_guess(&a, &b, dm.sharpen_temperature)
                })
                .collect::<Result<Vec<_>>>()?
        };

        let mut inputs: Vec<Array4<f64>> = xl.clone();
        inputs.extend(xu.iter().cloned());
        let all_x = concatenate(Axis(0), &inputs.iter().map(|a| a.view()).collect::<Vec<_>>())
            .map_err(|e| Error::invalid(format!("batch assembly: {e}")))?;
        let mut target_rows: Vec<Vec<f64>> = Vec::with_capacity(all_x.len_of(Axis(0)));
        for _ in 0..dm.augmentations {
            target_rows.extend(lab_targets.iter().cloned());
        }
        for _ in 0..dm.augmentations {
            target_rows.extend(unl_targets.iter().cloned());
        }
        let all_t = rows_to_array(&target_rows);

        let mut mix_rng = seed::rng(seed::derive(batch_seed, "mix"));
        let l = sample_mix_weight(dm.mixup_alpha, &mut mix_rng)?;
        let mut perm: Vec<usize> = (0..all_x.len_of(Axis(0))).collect();
        perm.shuffle(&mut mix_rng);
        let mixed_x = &all_x * l + &all_x.select(Axis(0), &perm) * (1.0 - l);
        let mixed_t = &all_t * l + &all_t.select(Axis(0), &perm) * (1.0 - l);

        let n_lab = lab.len() * dm.augmentations;
        net.zero_grad();
        let logits = net.forward(&mixed_x, true);
        let (_, grad_x) = loss::soft_cross_entropy(logits.slice(s![..n_lab, ..]), mixed_t.slice(s![..n_lab, ..]));
        let mut grad = Array2::<f64>::zeros(logits.raw_dim());
        grad.slice_mut(s![..n_lab, ..]).assign(&grad_x);
        if include_unlabeled && logits.nrows() > n_lab {
            let (_, grad_u) =
                loss::probability_mse(logits.slice(s![n_lab.., ..]), mixed_t.slice(s![n_lab.., ..]));
            grad.slice_mut(s![n_lab.., ..]).assign(&(grad_u * dm.unlabeled_weight));
        }
        net.backward(&grad);
        opt.step(net, lr);
    }
    Ok(())
}

pub fn train_dividemix(
    model_a: &mut Model,
    model_b: &mut Model,
    train: &DatasetSplit,
    test: &DatasetSplit,
    cfg: &TrainConfig,
    dm: &DivideMixConfig,
) -> Result<TrainOutcome> {
    train_dividemix_with(model_a, model_b, train, test, cfg, dm, true)
}

/// `include_unlabeled = false` drops the unlabeled loss term entirely
/// instead of weighting it.
pub(crate) fn train_dividemix_with(
    model_a: &mut Model,
    model_b: &mut Model,
    train: &DatasetSplit,
    test: &DatasetSplit,
    cfg: &TrainConfig,
    dm: &DivideMixConfig,
    include_unlabeled: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dm.validate()?;
    let view = train.trainer_view();
    check_inputs(&view, model_a)?;
    check_inputs(&view, model_b)?;
    let mut out = TrainOutcome::default();
    if model_a.parameter_hash() == model_b.parameter_hash() {
        let msg = "DivideMix networks start from identical parameters".to_string();
        log::warn!("{msg}");
        out.warnings.push(msg);
    }
    let monitor = Monitor::new(train, test);
    let mut opt_a = Optimizer::new(cfg.optimizer);
    let mut opt_b = Optimizer::new(cfg.optimizer);
    let (root_a, root_b) = (seed::derive(cfg.seed, "net-a"), seed::derive(cfg.seed, "net-b"));
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mask, gmm) = if epoch < dm.warmup_epochs {
            ce_epoch(model_a, &mut opt_a, &view, cfg, dm.batch_size, epoch, root_a);
            ce_epoch(model_b, &mut opt_b, &view, cfg, dm.batch_size, epoch, root_b);
            (None, None)
        } else {
            let (w_a, gmm_a) = divide(model_a, &view)?;
            let (w_b, _) = divide(model_b, &view)?;
            let seed_a = seed::derive_indexed(root_a, "dividemix-epoch", epoch as u64);
            let seed_b = seed::derive_indexed(root_b, "dividemix-epoch", epoch as u64);
            // Each network trains on the division made by its peer.
            dividemix_epoch(model_a, model_b, &mut opt_a, &view, &w_b, cfg, dm, lr, seed_a, include_unlabeled)?;
            dividemix_epoch(model_b, model_a, &mut opt_b, &view, &w_a, cfg, dm, lr, seed_b, include_unlabeled)?;
            let mask: Vec<bool> = w_a.iter().map(|&w| w >= dm.clean_threshold).collect();
            (Some(mask), gmm_a)
        };
        let m = monitor.evaluate_pair(model_a, model_b, epoch, mask.as_deref(), gmm)?;
        log::info!(
            "dividemix epoch {epoch}: test acc {:.4}, precision {:?}",
            m.test_acc,
            m.selection_precision
        );
        out.metrics.push(m);
        out.masks.push(mask);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{inject_symmetric_noise, make_synthetic_dataset, NoiseSpec, SyntheticSpec};
    use crate::model::{build_model, EncoderConfig, HeadKind};

    fn splits(p: f64) -> (DatasetSplit, DatasetSplit) {
        let train = make_synthetic_dataset(&SyntheticSpec::new(3, 12, (8, 8), 1)).unwrap();
        let test = make_synthetic_dataset(&SyntheticSpec::new(3, 4, (8, 8), 2).with_templates(1).named("test")).unwrap();
        (inject_symmetric_noise(&train, &NoiseSpec::new(p, 3, 9).unwrap()).unwrap(), test)
    }

    fn model(seed: u64) -> Model {
        build_model(&EncoderConfig::tiny(8, 8, 1), HeadKind::Classifier { classes: 3 }, seed).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig::retrain(4).with_epochs(epochs).with_batch_size(12)
    }

    #[test]
    fn zero_epochs_leave_the_model_alone() {
        let (train, test) = splits(0.5);
        let mut m = model(1);
        let before = m.parameter_hash();
        let out = train_cross_entropy(&mut m, &train, &test, &cfg(0)).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(m.parameter_hash(), before);
    }

    #[test]
    fn single_sample_is_memorized() {
        let (train, test) = splits(0.0);
        let one = DatasetSplit::new("train", 3, vec![train.images()[0].clone()]).unwrap();
        let mut m = model(2);
        let c = TrainConfig::retrain(1).with_epochs(200).with_batch_size(1);
        let out = train_cross_entropy(&mut m, &one, &test, &c).unwrap();
        assert_eq!(out.metrics.last().unwrap().train_acc_observed, 1.0);
    }

    #[test]
    fn coteaching_updates_on_peer_selection() {
        let (train, test) = splits(0.5);
        let (mut a, mut b) = (model(1), model(2));
        let ct = CoteachingConfig {
            warmup_epochs: 2,
            forget_rate: 0.5,
            exponent: 1.0,
        };
        let mut steps = 0;
        let out = train_coteaching_observed(&mut a, &mut b, &train, &test, &cfg(3), &ct, &mut |s| {
            assert_eq!(s.updated_a, s.selected_by_b);
            assert_eq!(s.updated_b, s.selected_by_a);
            steps += 1;
        })
        .unwrap();
        assert_eq!(steps, 9);
        assert_eq!(out.metrics.len(), 3);
        // Final epoch keeps 1 - tau_f of every 12-sample batch.
        assert_eq!(out.metrics[2].selected_count, Some(train.len() / 2));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn zero_forget_rate_matches_cross_entropy() {
        let (train, test) = splits(0.5);
        let (mut a, mut b) = (model(1), model(2));
        train_coteaching(&mut a, &mut b, &train, &test, &cfg(2), &CoteachingConfig::new(0.0)).unwrap();
        let mut ce = model(1);
        train_cross_entropy(&mut ce, &train, &test, &cfg(2)).unwrap();
        assert_eq!(a.parameter_hash(), ce.parameter_hash());
    }

    #[test]
    fn identical_networks_warn() {
        let (train, test) = splits(0.5);
        let (mut a, mut b) = (model(1), model(1));
        let out = train_coteaching(&mut a, &mut b, &train, &test, &cfg(1), &CoteachingConfig::new(0.5)).unwrap();
        assert_eq!(out.warnings.len(), 1);
    }

    fn dm_cfg() -> DivideMixConfig {
        DivideMixConfig {
            warmup_epochs: 1,
            batch_size: 8,
            ..DivideMixConfig::for_noise_rate(0.5)
        }
    }

    #[test]
    fn zero_unlabeled_weight_equals_dropping_the_term() {
        let (train, test) = splits(0.5);
        let (mut a1, mut b1) = (model(1), model(2));
        let (mut a2, mut b2) = (model(1), model(2));
        train_dividemix_with(&mut a1, &mut b1, &train, &test, &cfg(3), &dm_cfg(), true).unwrap();
        train_dividemix_with(&mut a2, &mut b2, &train, &test, &cfg(3), &dm_cfg(), false).unwrap();
        assert_eq!(a1.parameter_hash(), a2.parameter_hash());
        assert_eq!(b1.parameter_hash(), b2.parameter_hash());
        let mut a3 = model(1);
        let mut b3 = model(2);
        let weighted = DivideMixConfig {
            unlabeled_weight: 1.0,
            ..dm_cfg()
        };
        let out = train_dividemix_with(&mut a3, &mut b3, &train, &test, &cfg(3), &weighted, true).unwrap();
        assert_eq!(out.masks.iter().filter(|m| m.is_some()).count(), 2);
    }

    #[test]
    fn zero_threshold_labels_everything() {
        let (train, test) = splits(0.5);
        let (mut a, mut b) = (model(1), model(2));
        let dm = DivideMixConfig {
            clean_threshold: 0.0,
            ..dm_cfg()
        };
        let out = train_dividemix(&mut a, &mut b, &train, &test, &cfg(2), &dm).unwrap();
        assert_eq!(out.metrics[1].selected_count, Some(train.len()));
    }
}
