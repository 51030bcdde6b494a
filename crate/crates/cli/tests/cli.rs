//! Drives the `drought` binary end to end on small synthetic corpora.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use drought_core::config::RunConfig;
use drought_core::train::read_history;

fn drought(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drought"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = drought(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = "\
out = \"run\"
data.annotations = \"scenes\"
model.backbone = \"toy_cnn\"
model.weights = \"random\"
model.feature_dim = 8
batch.target_height = 16
batch.target_width = 16
batch.batch_size = 16
augment.enabled = false
train.epochs = 6
";

fn setup(n_per_class: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    ok(
        dir.path(),
        &[
            "synthesize",
            "scenes",
            "--n-per-class",
            n_per_class,
            "--patch-size",
            "16",
        ],
    );
    dir
}

#[test]
fn prepare_reports_fixture_counts() {
    let dir = setup("25");
    let stdout = ok(dir.path(), &["prepare", "--config", "run.toml"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(
        lines,
        [
            "train\thealthy\t20",
            "train\tstressed\t20",
            "val\thealthy\t5",
            "val\tstressed\t5",
            "test\thealthy\t0",
            "test\tstressed\t0",
        ]
    );
    let manifest = fs::read_to_string(dir.path().join("run/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 51);
}

#[test]
fn effective_config_round_trips() {
    let dir = setup("4");
    ok(dir.path(), &["prepare", "--config", "run.toml", "--seed", "5"]);
    let effective = dir.path().join("run/config.effective.toml");
    let reread = RunConfig::load(&effective).unwrap();
    let mut original = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    original.seed = 5;
    assert_eq!(reread, original);
}

#[test]
fn training_lowers_smoothed_validation_loss() {
    let dir = setup("60");
    ok(dir.path(), &["prepare", "--config", "run.toml"]);
    let stdout = ok(dir.path(), &["train", "--config", "run.toml"]);
    assert!(stdout.starts_with("trainable_params="));
    let history = read_history(&dir.path().join("run/history.tsv")).unwrap();
    let val: Vec<f64> = history.records.iter().map(|r| r.val_loss).collect();
    // three-epoch moving average
    let smoothed: Vec<f64> = val.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    assert!(
        smoothed.windows(2).all(|w| w[1] < w[0]),
        "smoothed val loss {smoothed:?}"
    );
}

#[test]
fn evaluate_from_prediction_log_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = String::from("truth\tpredicted\tprobability\n");
    for i in 0..40 {
        let truth = if i % 3 == 0 { "healthy" } else { "stressed" };
        log.push_str(&format!("{truth}\t\t{}\n", (i as f64 * 0.37).fract()));
    }
    fs::write(dir.path().join("preds.tsv"), log).unwrap();
    let a = ok(dir.path(), &["evaluate", "--out", "a", "--predictions", "preds.tsv"]);
    let b = ok(dir.path(), &["evaluate", "--out", "b", "--predictions", "preds.tsv"]);
    assert_eq!(a, b);
    let report = |d: &str| fs::read(dir.path().join(d).join("report.txt")).unwrap();
    assert_eq!(report("a"), report("b"));
    assert!(dir.path().join("a/comparison.tsv").is_file());
    assert!(dir.path().join("a/confusion.tsv").is_file());

    // compare rebuilds the table from the report alone
    fs::remove_file(dir.path().join("a/comparison.tsv")).unwrap();
    ok(dir.path(), &["compare", "--out", "a"]);
    assert!(dir.path().join("a/comparison.tsv").is_file());
}

#[test]
fn errors_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "train.learning_rate = 0.1\n").unwrap();
    let out = drought(dir.path(), &["prepare", "--config", "bad.toml"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with("error: kind=ConfigError message="), "{stderr}");

    let out = drought(dir.path(), &["train", "--out", "nothing"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: kind="));
}

#[test]
fn reference_backbone_without_weights_fails_cleanly() {
    let dir = setup("4");
    fs::write(
        dir.path().join("dense.toml"),
        "out = \"run\"\ndata.annotations = \"scenes\"\n",
    )
    .unwrap();
    ok(dir.path(), &["prepare", "--config", "dense.toml"]);
    let out = drought(dir.path(), &["train", "--config", "dense.toml"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: kind=WeightsUnavailable"), "{stderr}");
}
