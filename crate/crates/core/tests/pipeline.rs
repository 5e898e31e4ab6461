use std::fs;
use std::path::Path;

use noisy_ssl::cli::run;
use noisy_ssl::eval::read_aggregates_csv;
use noisy_ssl::experiment::{
    cmd_plot, cmd_pretrain, cmd_report, cmd_train, read_sidecar, ExperimentConfig, Figure, LnlMethod, ResultsStore,
    AGGREGATES_FILE, SUMMARIES_FILE,
};
use noisy_ssl::pretext::PretextKind;

const BASE: &str = r#"
seed = 3
trials = 3
noise_rates = [0.5, 0.8]
method = "ce"
pretext = "none"

[dataset]
kind = "synthetic"
num_classes = 3
train_per_class = 10
test_per_class = 5
height = 12
width = 12

[pretrain]
epochs = 1
projection_dim = 8

[retrain]
epochs = 5
batch_size = 16
"#;

fn config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn train_writes_one_record_per_rate_and_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let marker = cmd_pretrain(&cfg).unwrap();
    assert_eq!(marker, vec![dir.path().join("checkpoints/none/MARKER")]);
    let report = cmd_train(&cfg).unwrap();
    assert_eq!(report.records.len(), 6);
    assert_eq!(report.summaries.len(), 6);
    assert_eq!(report.aggregates.len(), 2);
    assert!(report.aggregates.iter().all(|a| a.trials == 3));
    for r in &report.records {
        assert_eq!(r.epochs.len(), 5);
    }
    let on_disk = read_aggregates_csv(dir.path().join(AGGREGATES_FILE)).unwrap();
    assert_eq!(on_disk, report.aggregates);

    let store = ResultsStore::existing(dir.path()).unwrap();
    let manifest = store.manifest().unwrap();
    let hash = cfg.hash();
    assert!(manifest.artifacts.contains_key(SUMMARIES_FILE));
    assert!(manifest.artifacts.values().all(|h| *h == hash));
    for rel in manifest.artifacts.keys() {
        assert!(dir.path().join(rel).exists(), "{rel}");
    }
    let meta = fs::read_to_string(dir.path().join("runs/ce-none-p0.50-t0/meta.json")).unwrap();
    assert!(meta.contains(&hash));

    let table = cmd_report(dir.path()).unwrap();
    assert!(table.contains("ce") && table.contains("0.80"));

    for figure in [Figure::NoiseCurve, Figure::CeBars, Figure::LnlCurves] {
        let out = cmd_plot(dir.path(), figure).unwrap();
        assert!(out.png.exists() && out.svg.exists());
        let points = read_sidecar(&out.csv).unwrap();
        assert!(!points.is_empty());
        for p in &points {
            let row = report
                .aggregates
                .iter()
                .find(|a| (a.p - p.p).abs() < 1e-12)
                .unwrap();
            assert!((p.mean - row.best_mean).abs() < 1e-9 || (p.mean - row.last_mean).abs() < 1e-9);
        }
    }
}

#[test]
fn dual_methods_pretrain_two_distinct_networks() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.trials = 1;
    cfg.noise_rates = vec![0.5];
    cfg.method = LnlMethod::Coteaching;
    cfg.pretext = PretextKind::Rotation;
    let err = cmd_train(&cfg).err().expect("train before pretrain must fail");
    assert_eq!(err.category(), "model");
    assert!(err.to_string().contains("pretrain"));

    let paths = cmd_pretrain(&cfg).unwrap();
    assert_eq!(paths.len(), 2);
    let log = |k: usize| -> serde_json::Value {
        let text = fs::read_to_string(dir.path().join(format!("checkpoints/rotation/t0-net{k}.json"))).unwrap();
        serde_json::from_str(&text).unwrap()
    };
    assert_ne!(log(0)["parameter_hash"], log(1)["parameter_hash"]);
    assert_ne!(log(0)["seed"], log(1)["seed"]);
    let report = cmd_train(&cfg).unwrap();
    let first = &report.records[0].epochs[0];
    assert!(first.peer_test_acc.is_some() && first.selected_count.is_some());
}

#[test]
fn reruns_replace_summary_rows_instead_of_appending() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.trials = 1;
    cfg.noise_rates = vec![0.5];
    cmd_train(&cfg).unwrap();
    let once = fs::read(dir.path().join(SUMMARIES_FILE)).unwrap();
    cmd_train(&cfg).unwrap();
    let twice = fs::read(dir.path().join(SUMMARIES_FILE)).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn cli_exit_codes_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, BASE).unwrap();
    let out = dir.path().join("out");
    let args = |rest: &[&str]| -> Vec<String> {
        let mut v = vec!["noisy-ssl".to_string()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    };
    let c = cfg_path.to_str().unwrap();
    let o = out.to_str().unwrap();
    assert_eq!(run(args(&["--config", c, "--out", o, "--trials", "1", "--seed", "9", "train"])), 0);
    let summaries = fs::read_to_string(out.join(SUMMARIES_FILE)).unwrap();
    assert_eq!(summaries.lines().count(), 3);
    assert_eq!(run(args(&["--out", o, "report"])), 0);
    assert_eq!(run(args(&["--out", o, "plot", "ce-bars"])), 0);
    assert!(out.join("plots/ce-bars.csv").exists());

    assert_eq!(run(args(&["frobnicate"])), 2);
    assert_eq!(run(args(&["--trials", "lots", "train"])), 2);
    assert_eq!(run(args(&["--config", "/nonexistent/exp.toml", "train"])), 1);
    fs::write(&cfg_path, "trials = 0\n").unwrap();
    assert_eq!(run(args(&["--config", c, "--out", o, "train"])), 2);
    assert_eq!(run(args(&["--help"])), 0);
}

#[test]
fn shipped_example_config_is_valid() {
    let cfg = ExperimentConfig::from_toml_str(include_str!("../../../configs/desk.toml")).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.method, LnlMethod::Coteaching);
    assert_eq!(cfg.pretext, PretextKind::Rotation);
    assert_eq!(cfg.noise_rates, vec![0.0, 0.4, 0.6, 0.8]);
}
