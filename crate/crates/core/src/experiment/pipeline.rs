use std::path::PathBuf;

use serde::Serialize;

use super::config::{DatasetConfig, ExperimentConfig, LnlMethod};
use super::store::ResultsStore;
use crate::data::{
    discover_class_names, inject_symmetric_noise, load_image_folder, make_synthetic_dataset, DatasetSplit, NoiseSpec,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{best_last_series, AggregateRow, RunMeta, RunRecord, TrialSummary};
use crate::lnl::{train_coteaching, train_cross_entropy, train_dividemix, TrainOutcome};
use crate::model::{build_model, load_checkpoint, save_checkpoint, HeadKind, Model, Provenance};
use crate::pretext::{pretrain, PretextKind, PretextOutcome};
use crate::seed;

/// Seed roles derived from the master seed. Every random stream of an
/// experiment comes from one of these.
///
/// ```text
/// trial t         derive_indexed(master, "trial", t)
/// train images    derive(master, "train-images")
/// test images     derive(master, "test-images")
/// pretrain net k  derive_indexed(trial, "pretrain", k)
/// random init k   derive_indexed(trial, "init", k)
/// new head k      derive_indexed(trial, "head", k)
/// noise at p      derive_indexed(trial, "noise", round(p * 1e6))
/// retraining      derive(trial, "retrain")
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedPlan {
    pub master: u64,
}

impl SeedPlan {
    pub fn trial(&self, t: usize) -> u64 {
        seed::derive_indexed(self.master, "trial", t as u64)
    }

    pub fn train_images(&self) -> u64 {
        seed::derive(self.master, "train-images")
    }

    pub fn test_images(&self) -> u64 {
        seed::derive(self.master, "test-images")
    }

    pub fn pretrain(&self, t: usize, net: usize) -> u64 {
        seed::derive_indexed(self.trial(t), "pretrain", net as u64)
    }

    pub fn init(&self, t: usize, net: usize) -> u64 {
        seed::derive_indexed(self.trial(t), "init", net as u64)
    }

    pub fn head(&self, t: usize, net: usize) -> u64 {
        seed::derive_indexed(self.trial(t), "head", net as u64)
    }

    pub fn noise(&self, t: usize, p: f64) -> u64 {
        seed::derive_indexed(self.trial(t), "noise", (p * 1e6).round() as u64)
    }

    pub fn retrain(&self, t: usize) -> u64 {
        seed::derive(self.trial(t), "retrain")
    }
}

/// Clean training split and test split.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(DatasetSplit, DatasetSplit)> {
    let seeds = SeedPlan { master: cfg.seed };
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            num_classes,
            train_per_class,
            test_per_class,
            height,
            width,
            channels,
            template_seed,
        } => {
            let train = SyntheticSpec::new(*num_classes, *train_per_class, (*height, *width), seeds.train_images())
                .with_templates(*template_seed)
                .with_channels(*channels);
            let test = SyntheticSpec::new(*num_classes, *test_per_class, (*height, *width), seeds.test_images())
                .with_templates(*template_seed)
                .with_channels(*channels)
                .named(crate::data::TEST_SPLIT_NAME)
                .with_id_offset((num_classes * train_per_class) as u64);
            Ok((make_synthetic_dataset(&train)?, make_synthetic_dataset(&test)?))
        }
        DatasetConfig::Folder {
            train_dir,
            test_dir,
            height,
            width,
            channels,
            classes,
        } => {
            let names = match classes {
                Some(c) => c.clone(),
                None => discover_class_names(train_dir)?,
            };
            let train = load_image_folder(train_dir, (*height, *width), &names, *channels)?;
            let test = load_image_folder(test_dir, (*height, *width), &names, *channels)?
                .renamed(crate::data::TEST_SPLIT_NAME);
            Ok((train, test))
        }
    }
}

fn networks(method: LnlMethod) -> usize {
    if method.dual() {
        2
    } else {
        1
    }
}

#[derive(Serialize)]
struct PretrainLog<'a> {
    pretext: &'a str,
    trial: usize,
    net: usize,
    seed: u64,
    parameter_hash: String,
    trace: &'a [crate::pretext::PretextEpoch],
}

/// Run the configured pretext task for every trial (two independent
/// networks per trial for dual-network methods). `pretext = none` only
/// writes a marker.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let store = ResultsStore::open(&cfg.output_dir, cfg)?;
    let pretext = cfg.pretext.name();
    if cfg.pretext == PretextKind::None {
        let path = store.write_text(
            &ResultsStore::marker_rel(pretext),
            "pretext none: retraining starts from default initialization\n",
        )?;
        return Ok(vec![path]);
    }
    let (train, _) = load_dataset(cfg)?;
    let encoder = cfg.encoder_config()?;
    let seeds = SeedPlan { master: cfg.seed };
    let images = train.pixels();
    let mut paths = Vec::new();
    for trial in 0..cfg.trials {
        for net in 0..networks(cfg.method) {
            let s = seeds.pretrain(trial, net);
            let pc = cfg.pretext_config(s);
            log::info!("pretraining {pretext} trial {trial} net {net}");
            let PretextOutcome { model, trace, .. } = pretrain(&encoder, &images, &pc)?;
            let rel = ResultsStore::checkpoint_rel(pretext, trial, net);
            let path = store.prepare(&rel)?;
            let provenance = Provenance {
                pretext: pretext.into(),
                dataset: cfg.dataset.label(),
                epochs: pc.train.epochs,
                seed: s,
                config_hash: Some(store.config_hash().into()),
            };
            save_checkpoint(&model, provenance, &path)?;
            store.record_artifact(&rel)?;
            let log = PretrainLog {
                pretext,
                trial,
                net,
                seed: s,
                parameter_hash: model.parameter_hash(),
                trace: &trace,
            };
            store.write_text(&rel.replace(".ckpt", ".json"), &(serde_json::to_string_pretty(&log)? + "\n"))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Starting networks for one trial: pretrained encoders with a fresh
/// classifier head, or default initialization for `pretext = none`.
fn initial_models(cfg: &ExperimentConfig, store: &ResultsStore, trial: usize, classes: usize) -> Result<Vec<Model>> {
    let seeds = SeedPlan { master: cfg.seed };
    let encoder = cfg.encoder_config()?;
    let head = HeadKind::Classifier { classes };
    (0..networks(cfg.method))
        .map(|net| {
            if cfg.pretext == PretextKind::None {
                return build_model(&encoder, head, seeds.init(trial, net));
            }
            let rel = ResultsStore::checkpoint_rel(cfg.pretext.name(), trial, net);
            let path = store.path(&rel);
            if !path.exists() {
                return Err(Error::Checkpoint(format!(
                    "missing {}; run `noisy-ssl pretrain` with the same config first",
                    path.display()
                )));
            }
            let ckpt = load_checkpoint(&path)?;
            let mut model = build_model(&encoder, head, seeds.head(trial, net))?;
            model.restore(&ckpt).map_err(|e| match e {
                Error::ArchitectureMismatch { mut diffs } => {
                    diffs.insert(
                        0,
                        format!("checkpoint {} does not fit encoder preset `{}`", path.display(), cfg.encoder),
                    );
                    Error::ArchitectureMismatch { diffs }
                }
                other => other,
            })?;
            Ok(model)
        })
        .collect()
}

/// Everything `train` produced.
pub struct TrainReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<TrialSummary>,
    pub aggregates: Vec<AggregateRow>,
    pub warnings: Vec<String>,
}

fn run_method(
    cfg: &ExperimentConfig,
    mut models: Vec<Model>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    p: f64,
    retrain_seed: u64,
) -> Result<TrainOutcome> {
    let tc = cfg.train_config(retrain_seed);
    match cfg.method {
        LnlMethod::Ce => train_cross_entropy(&mut models[0], train, test, &tc),
        LnlMethod::Coteaching => {
            let (a, b) = models.split_at_mut(1);
            train_coteaching(&mut a[0], &mut b[0], train, test, &tc, &cfg.coteaching_config(p))
        }
        LnlMethod::Dividemix => {
            let (a, b) = models.split_at_mut(1);
            train_dividemix(&mut a[0], &mut b[0], train, test, &tc, &cfg.dividemix_config(p))
        }
    }
}

/// Inject noise and retrain for every (noise rate, trial); persist run
/// records, merge trial summaries into the store and refresh aggregates.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let store = ResultsStore::open(&cfg.output_dir, cfg)?;
    let (clean, test) = load_dataset(cfg)?;
    let seeds = SeedPlan { master: cfg.seed };
    let k = clean.num_classes();
    let mut report = TrainReport {
        records: Vec::new(),
        summaries: Vec::new(),
        aggregates: Vec::new(),
        warnings: Vec::new(),
    };
    for trial in 0..cfg.trials {
        let start = initial_models(cfg, &store, trial, k)?;
        for &p in &cfg.noise_rates {
            let noisy = inject_symmetric_noise(&clean, &NoiseSpec::new(p, k, seeds.noise(trial, p))?)?;
            log::info!(
                "{} + {} at p = {p}, trial {trial}: {} of {} labels corrupted",
                cfg.method,
                cfg.pretext,
                noisy.corrupted_count(),
                noisy.len()
            );
            let outcome = run_method(cfg, start.clone(), &noisy, &test, p, seeds.retrain(trial))?;
            report.warnings.extend(outcome.warnings.iter().map(|w| format!("p={p} trial {trial}: {w}")));
            let meta = RunMeta {
                method: cfg.method.name().into(),
                pretext: cfg.pretext.name().into(),
                noise_rate: p,
                seed: seeds.trial(trial),
                dataset: cfg.dataset.label(),
            };
            let record = RunRecord::new(meta, outcome.metrics)?;
            store.write_run(&record, trial)?;
            let series: Vec<f64> = if cfg.ensemble && cfg.method.dual() {
                record.epochs.iter().map(|e| e.ensemble_test_acc.unwrap_or(e.test_acc)).collect()
            } else {
                record.test_acc()
            };
            let (best, last) = best_last_series(&series)?;
            report.summaries.push(TrialSummary {
                method: record.meta.method.clone(),
                pretext: record.meta.pretext.clone(),
                p,
                seed: record.meta.seed,
                best,
                last,
            });
            report.records.push(record);
        }
    }
    report.aggregates = store.merge_summaries(&report.summaries)?;
    Ok(report)
}
