//! Training loop behavior on a small synthetic corpus.

use std::fs;
use std::path::Path;

use drought_core::config::RunConfig;
use drought_core::error::Error;
use drought_core::model::ClassifierModel;
use drought_core::pipeline::{best_checkpoint, cmd_prepare, cmd_train, read_manifest};
use drought_core::synth::{generate_dataset, SynthSpec};
use drought_core::train::{evaluate_loss, read_history};

fn corpus(dir: &Path) {
    let spec = SynthSpec {
        n_per_class: 48,
        patch_size: 16,
        ..SynthSpec::default()
    };
    generate_dataset(&spec, &dir.join("scenes")).unwrap();
}

fn config(dir: &Path, out: &str, epochs: usize, extra: &str) -> RunConfig {
    let text = format!(
        "out = \"{out}\"\n\
         data.annotations = \"scenes\"\n\
         model.backbone = \"toy_cnn\"\n\
         model.weights = \"random\"\n\
         model.feature_dim = 8\n\
         batch.target_height = 16\n\
         batch.target_width = 16\n\
         batch.batch_size = 16\n\
         train.epochs = {epochs}\n\
         {extra}"
    );
    RunConfig::parse(&text, dir).unwrap()
}

#[test]
fn reloaded_best_checkpoint_reproduces_minimum_val_loss() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let cfg = config(dir.path(), "run", 3, "");
    cmd_prepare(&cfg).unwrap();
    let summary = cmd_train(&cfg).unwrap();
    let history = &summary.history;
    assert_eq!(history.records.len(), 3);

    let min = history.min_val_loss().unwrap();
    let best = &history.records[history.best_epoch];
    assert_eq!(best.val_loss, min);

    let model = ClassifierModel::load(&best_checkpoint(&cfg.out)).unwrap();
    let manifest = read_manifest(&cfg.out).unwrap();
    let (reloaded, _) = evaluate_loss(&model, &manifest.val, &cfg.batch_spec().unwrap()).unwrap();
    assert!((reloaded - min).abs() < 1e-6, "{reloaded} vs {min}");

    for name in ["loss.png", "accuracy.png", "history.tsv"] {
        assert!(cfg.out.join("curves").join(name).is_file(), "{name}");
    }
    let written = read_history(&cfg.out.join("history.tsv")).unwrap();
    assert_eq!(&written, history);
}

#[test]
fn same_seed_same_history() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let a = config(dir.path(), "a", 2, "");
    let b = config(dir.path(), "b", 2, "");
    for cfg in [&a, &b] {
        cmd_prepare(cfg).unwrap();
        cmd_train(cfg).unwrap();
    }
    let read = |cfg: &RunConfig| fs::read_to_string(cfg.out.join("history.tsv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(
        fs::read(best_checkpoint(&a.out)).unwrap(),
        fs::read(best_checkpoint(&b.out)).unwrap()
    );
}

#[test]
fn huge_learning_rate_is_reported_as_divergence() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let cfg = config(dir.path(), "run", 3, "train.initial_lr = 1e300\n");
    cmd_prepare(&cfg).unwrap();
    match cmd_train(&cfg) {
        Err(Error::DivergenceDetected { epoch, history }) => {
            assert_eq!(history.records.len(), epoch + 1);
            assert!(cfg.out.join("history.tsv").is_file());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn single_epoch_run_still_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let cfg = config(dir.path(), "run", 1, "");
    cmd_prepare(&cfg).unwrap();
    let summary = cmd_train(&cfg).unwrap();
    assert_eq!(summary.history.best_epoch, 0);
    assert!(cfg.out.join("curves/loss.png").is_file());
    assert!(cfg.out.join("checkpoints/epoch_000.ntar").is_file());
}
