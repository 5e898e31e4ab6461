use std::collections::HashSet;

use ndarray::{Array1, Array2};
use noisy_ssl::data::{
    inject_symmetric_noise, make_synthetic_dataset, transition_matrix, CorruptionRecord, DatasetSplit, Image,
    LabeledImage, NoiseSpec, Source, SyntheticSpec,
};
use noisy_ssl::eval::{aggregate_trials, best_last_series, selection_metrics, TrialSummary};
use noisy_ssl::lnl::{fit_gmm_1d, forget_rate, mixup_with_lambda, sample_mix_weight, sharpen, small_loss_select, CoteachingConfig};
use noisy_ssl::model::{build_model, load_checkpoint, save_checkpoint, EncoderConfig, HeadKind, Provenance};
use noisy_ssl::pretext::{
    make_contrastive_pair, make_jigsaw_sample, make_rotation_sample, nt_xent_loss, AugmentationPipeline,
    PermutationSet,
};
use noisy_ssl::seed;
use proptest::prelude::*;
use rand::Rng;

fn split_of(ids: &[u64], labels: &[usize], k: usize) -> DatasetSplit {
    let images = ids
        .iter()
        .zip(labels)
        .map(|(&id, &clean_label)| LabeledImage {
            id,
            image: Image::zeros(1, 2, 2),
            clean_label,
            source: Source::Synthetic,
        })
        .collect();
    DatasetSplit::new("train", k, images).unwrap()
}

fn textured(seed: u64) -> Image {
    let mut rng = seed::rng(seed);
    Image::from_fn(1, 12, 12, |_| rng.random::<f64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corrupted_flag_matches_label_difference(
        k in 2usize..10,
        p in 0.0f64..=1.0,
        s in any::<u64>(),
        n in 1usize..200,
    ) {
        let ids: Vec<u64> = (0..n as u64).collect();
        let labels: Vec<usize> = ids.iter().map(|&i| (i as usize * 7) % k).collect();
        let noisy = inject_symmetric_noise(&split_of(&ids, &labels, k), &NoiseSpec::new(p, k, s).unwrap()).unwrap();
        for r in noisy.records() {
            prop_assert_eq!(r.is_corrupted, r.clean_label != r.observed_label);
            prop_assert!(r.observed_label < k);
        }
    }

    #[test]
    fn noise_is_independent_of_sample_order(k in 2usize..6, p in 0.0f64..=1.0, s in any::<u64>(), rot in 0usize..50) {
        let ids: Vec<u64> = (1000..1050).collect();
        let labels: Vec<usize> = ids.iter().map(|&i| i as usize % k).collect();
        let spec = NoiseSpec::new(p, k, s).unwrap();
        let a = inject_symmetric_noise(&split_of(&ids, &labels, k), &spec).unwrap();
        let mut ids_r = ids.clone();
        let mut labels_r = labels.clone();
        ids_r.rotate_left(rot);
        labels_r.rotate_left(rot);
        let b = inject_symmetric_noise(&split_of(&ids_r, &labels_r, k), &spec).unwrap();
        let by_id = |s: &DatasetSplit| {
            let mut v: Vec<CorruptionRecord> = s.records().to_vec();
            v.sort_by_key(|r| r.id);
            v
        };
        prop_assert_eq!(by_id(&a), by_id(&b));
        let again = inject_symmetric_noise(&split_of(&ids, &labels, k), &spec).unwrap();
        prop_assert_eq!(a.records(), again.records());
    }

    #[test]
    fn transition_rows_are_stochastic(k in 2usize..12, p in 0.0f64..=1.0) {
        let t = transition_matrix(&NoiseSpec::new(p, k, 0).unwrap()).unwrap();
        for row in t.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forget_rate_is_monotone_and_bounded(tau in 0.0f64..=1.0, tk in 1usize..30, c in 0.25f64..4.0) {
        let cfg = CoteachingConfig { warmup_epochs: tk, forget_rate: tau, exponent: c };
        let mut prev = f64::INFINITY;
        for t in 0..(3 * tk + 5) {
            let r = forget_rate(t, &cfg);
            prop_assert!(r <= prev + 1e-15);
            prop_assert!(r >= 1.0 - tau - 1e-12 && r <= 1.0 + 1e-12);
            prev = r;
        }
    }

    #[test]
    fn small_loss_select_matches_sort_oracle(
        losses in prop::collection::vec(prop_oneof![0.0f64..10.0, (0u8..4).prop_map(f64::from)], 1..1000),
        r in 0.001f64..=1.0,
    ) {
        let got = small_loss_select(&losses, r).unwrap();
        let n = losses.len();
        let x = r * n as f64;
        let keep = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() } as usize;
        let keep = keep.clamp(1, n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap().then(a.cmp(&b)));
        let mut want: Vec<usize> = idx[..keep].to_vec();
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn gmm_log_likelihood_never_decreases(
        lo in prop::collection::vec(0.0f64..0.3, 5..200),
        hi in prop::collection::vec(0.5f64..3.0, 5..200),
    ) {
        let values: Vec<f64> = lo.into_iter().chain(hi).collect();
        let fit = fit_gmm_1d(&values).unwrap();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!((fit.weights[0] + fit.weights[1] - 1.0).abs() < 1e-9);
        prop_assert!(fit.variances.iter().all(|&v| v >= 1e-6));
        prop_assert!(fit.posteriors.iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert_eq!(fit.posteriors.len(), values.len());
    }

    #[test]
    fn sharpen_keeps_argmax_and_mass(
        raw in prop::collection::vec(0.01f64..1.0, 2..10),
        t in 0.05f64..5.0,
    ) {
        let total: f64 = raw.iter().sum();
        let dist: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let out = sharpen(&dist, t).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let m = argmax(&dist);
        prop_assert!(out[m] >= out[argmax(&out)] - 1e-12);
        let flat = sharpen(&dist, 100.0).unwrap();
        prop_assert!(flat.iter().copied().fold(0.0, f64::max) <= dist.iter().copied().fold(0.0, f64::max) + 1e-12);
    }

    #[test]
    fn sharpen_at_high_temperature_approaches_uniform(raw in prop::collection::vec(0.8f64..=1.0, 2..10)) {
        let k = raw.len() as f64;
        let out = sharpen(&raw, 100.0).unwrap();
        for v in out {
            prop_assert!((v - 1.0 / k).abs() < 1e-3);
        }
    }

    #[test]
    fn mixup_weight_on_first_is_at_least_half(alpha in 0.05f64..8.0, s in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut rng = seed::rng(s);
        let l = sample_mix_weight(alpha, &mut rng).unwrap();
        prop_assert!((0.5..=1.0).contains(&l));
        let x1 = Array2::<f64>::ones((2, 3));
        let x2 = Array2::<f64>::zeros((2, 3));
        let p1 = Array1::from(vec![1.0, 0.0]);
        let p2 = Array1::from(vec![0.0, 1.0]);
        let (x, p, used) = mixup_with_lambda(&x1, &p1, &x2, &p2, lambda).unwrap();
        prop_assert!(used >= 0.5);
        prop_assert!(x.iter().all(|&v| (v - used).abs() < 1e-12));
        prop_assert!(p[0] >= p[1]);
    }

    #[test]
    fn last_never_exceeds_best(acc in prop::collection::vec(0.0f64..=1.0, 5..60)) {
        let (best, last) = best_last_series(&acc).unwrap();
        prop_assert!(last <= best + 1e-12);
        let oracle_best = acc.iter().copied().fold(f64::MIN, f64::max);
        prop_assert_eq!(best, oracle_best);
        let tail = &acc[acc.len() - 5..];
        prop_assert!((last - tail.iter().sum::<f64>() / 5.0).abs() < 1e-12);
    }

    #[test]
    fn best_is_order_free_last_uses_final_window(
        head in prop::collection::vec(0.0f64..=1.0, 0..30),
        tail in prop::collection::vec(0.0f64..=1.0, 5),
        s in any::<u64>(),
    ) {
        let series: Vec<f64> = head.iter().chain(&tail).copied().collect();
        let mut shuffled_head = head.clone();
        rand::seq::SliceRandom::shuffle(shuffled_head.as_mut_slice(), &mut seed::rng(s));
        let other: Vec<f64> = shuffled_head.iter().chain(&tail).copied().collect();
        let a = best_last_series(&series).unwrap();
        let b = best_last_series(&other).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn selection_metrics_are_bounded(
        rows in prop::collection::vec((0usize..5, 0usize..5, any::<bool>()), 1..300),
    ) {
        let records: Vec<CorruptionRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(c, o, _))| CorruptionRecord::new(i as u64, c, o))
            .collect();
        let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let m = selection_metrics(&mask, &records, 5).unwrap();
        for v in [m.precision, m.recall].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(m.per_class_selected.iter().sum::<usize>(), m.selected_count);
        prop_assert_eq!(m.selected_count, mask.iter().filter(|&&b| b).count());
    }

    #[test]
    fn aggregate_mean_lies_within_trials(
        trials in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..8),
    ) {
        let rows: Vec<TrialSummary> = trials
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| TrialSummary {
                method: "ce".into(),
                pretext: "none".into(),
                p: 0.4,
                seed: i as u64,
                best: a.max(b),
                last: a.min(b),
            })
            .collect();
        let agg = aggregate_trials(&rows).unwrap();
        prop_assert_eq!(agg.len(), 1);
        let lo = rows.iter().map(|r| r.last).fold(f64::MAX, f64::min);
        let hi = rows.iter().map(|r| r.last).fold(f64::MIN, f64::max);
        prop_assert!(agg[0].last_mean >= lo - 1e-12 && agg[0].last_mean <= hi + 1e-12);
        let lo = rows.iter().map(|r| r.best).fold(f64::MAX, f64::min);
        let hi = rows.iter().map(|r| r.best).fold(f64::MIN, f64::max);
        prop_assert!(agg[0].best_mean >= lo - 1e-12 && agg[0].best_mean <= hi + 1e-12);
        prop_assert_eq!(agg[0].trials, rows.len());
    }

    #[test]
    fn nt_xent_falls_as_positive_similarity_rises(
        others in prop::collection::vec(-1.0f64..1.0, 6 * 4),
        t in 0.05f64..1.0,
        theta in 0.1f64..3.0,
        step in 0.01f64..0.09,
    ) {
        // Pair 1 lives in dims 0-1, every other embedding in dims 2-5, so
        // rotating b_1 towards a_1 changes no similarity except the positive one.
        let embed = |angle: f64| {
            let mut z = Array2::<f64>::zeros((8, 6));
            z[[0, 0]] = 1.0;
            z[[4, 0]] = angle.cos();
            z[[4, 1]] = angle.sin();
            for (j, &row) in [1usize, 2, 3, 5, 6, 7].iter().enumerate() {
                for d in 0..4 {
                    z[[row, 2 + d]] = others[j * 4 + d] + if d == j % 4 { 1.5 } else { 0.0 };
                }
            }
            z
        };
        let (far, _) = nt_xent_loss(embed(theta).view(), t).unwrap();
        let (near, _) = nt_xent_loss(embed(theta * (1.0 - step)).view(), t).unwrap();
        prop_assert!(near < far, "{near} !< {far}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pretext_generators_are_pure(s in any::<u64>(), img_seed in 0u64..1000) {
        let img = textured(img_seed);
        let pipe = AugmentationPipeline::strong();
        prop_assert_eq!(make_rotation_sample(&img, &pipe, s).unwrap(), make_rotation_sample(&img, &pipe, s).unwrap());
        let perms = PermutationSet::generate(9, 10, 3).unwrap();
        prop_assert_eq!(
            make_jigsaw_sample(&img, &pipe, &perms, 4, s).unwrap(),
            make_jigsaw_sample(&img, &pipe, &perms, 4, s).unwrap()
        );
        let cpipe = AugmentationPipeline::contrastive(12, 12);
        prop_assert_eq!(make_contrastive_pair(&img, &cpipe, s), make_contrastive_pair(&img, &cpipe, s));
    }

    #[test]
    fn permutation_sets_are_distinct_bijections(cells in 3usize..8, count in 1usize..40, s in any::<u64>()) {
        let total: usize = (1..=cells).product();
        prop_assume!(count <= total);
        let set = PermutationSet::generate(cells, count, s).unwrap();
        prop_assert_eq!(set.len(), count);
        let mut seen = HashSet::new();
        for p in set.perms() {
            let mut sorted = p.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..cells).collect::<Vec<_>>());
            prop_assert!(seen.insert(p.clone()));
        }
        let again = PermutationSet::generate(cells, count, s).unwrap();
        prop_assert_eq!(set.perms(), again.perms());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(s in any::<u64>(), classes in 2usize..6) {
        let cfg = EncoderConfig::tiny(8, 8, 1);
        let model = build_model(&cfg, HeadKind::Classifier { classes }, s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let prov = Provenance { pretext: "none".into(), dataset: "x".into(), epochs: 0, seed: s, config_hash: None };
        save_checkpoint(&model, prov, &path).unwrap();
        let back = load_checkpoint(&path).unwrap().to_model(None, 0).unwrap();
        prop_assert_eq!(back.named_tensors(), model.named_tensors());
    }
}

#[test]
fn test_split_is_refused() {
    let test = make_synthetic_dataset(&SyntheticSpec::new(2, 3, (4, 4), 1).named("test")).unwrap();
    assert!(inject_symmetric_noise(&test, &NoiseSpec::new(0.5, 2, 0).unwrap()).is_err());
}

#[test]
fn encoder_output_matches_feature_dim() {
    for (name, h) in [("tiny", 16), ("resnet18-like", 32)] {
        let cfg = EncoderConfig::preset(name, h, h, 1).unwrap();
        let mut model = build_model(&cfg, HeadKind::Classifier { classes: 3 }, 1).unwrap();
        let x = ndarray::Array4::<f64>::from_elem((2, 1, h, h), 0.3);
        let mut enc = model.encoder().clone();
        assert_eq!(enc.forward(&x, false).ncols(), cfg.feature_dim, "{name}");
        let a = model.forward(&x, false);
        let b = model.forward(&x, false);
        assert_eq!(a, b);
    }
}
