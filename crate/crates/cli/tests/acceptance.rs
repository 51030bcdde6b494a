//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every tolerance is a named constant below.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use drought_core::config::RunConfig;
use drought_core::evaluate::{compute_metrics, predict_labels, ConfusionMatrix, MetricReport};
use drought_core::explain::{input_gradient_saliency, standardize, SaliencyWarning};
use drought_core::ingest::DatasetManifest;
use drought_core::model::{build_classifier, BackboneSpec, ClassifierModel, HeadConfig};
use drought_core::pipeline::{best_checkpoint, cmd_prepare, cmd_train, read_manifest};
use drought_core::rng::seeded;
use drought_core::synth::{
    brute_force_grad, generate_dataset, loss_central_difference, perturb_biases, relative_error, sample_coordinates,
    SynthSpec,
};
use drought_core::train::{
    evaluate_loss, loss_and_gradients, lr_at_epoch, read_history, CheckpointTracker, TrainingConfig,
};
use drought_core::Label;
use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;

/// Percentage points.
const ACCURACY_TOL_PP: f64 = 0.01;
const CLASS_METRIC_TOL: f64 = 0.0005;
const METRIC_RUNTIME: Duration = Duration::from_secs(1);
const LR_TOL: f64 = 1e-12;
const HEAD_PARAMS: usize = 139_521;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const SALIENCY_STEP: f64 = 1e-4;
const SALIENCY_TOL: f64 = 1e-3;
const SALIENCY_PIXELS: usize = 100;
const GRAD_RUNTIME: Duration = Duration::from_secs(60);
const STANDARDIZE_MAPS: usize = 1000;
const STANDARDIZE_TOL: f64 = 1e-6;
const RELOAD_TOL: f64 = 1e-6;
const E2E_RUNTIME: Duration = Duration::from_secs(180);
const E2E_MIN_ACCURACY: f64 = 0.95;
const E2E_MAX_EPOCHS: usize = 5;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{name} = {got}, expected {want} ± {tol}")
    })
}

fn report_for(cm: ConfusionMatrix) -> Result<MetricReport, String> {
    compute_metrics(&cm).map_err(|e| e.to_string())
}

fn class_value(v: Option<f64>, name: &str) -> Result<f64, String> {
    v.ok_or_else(|| format!("{name} undefined"))
}

/// All integer matrices over 734 stressed and 401 healthy items whose rounded
/// accuracy (2 dp, in percent) and per-class precision/recall (3 dp) match.
fn brute_force_matrices(acc_pct: f64, stressed: (f64, f64), healthy: (f64, f64)) -> Vec<(u64, u64, u64, u64)> {
    let round = |v: f64, dp: i32| (v * 10f64.powi(dp)).round();
    let mut hits = Vec::new();
    for tp in 0..=734u64 {
        for tn in 0..=401u64 {
            let (fn_, fp) = (734 - tp, 401 - tn);
            if tp + fp == 0 || tn + fn_ == 0 {
                continue;
            }
            let acc = 100.0 * (tp + tn) as f64 / 1135.0;
            let sp = tp as f64 / (tp + fp) as f64;
            let sr = tp as f64 / 734.0;
            let hp = tn as f64 / (tn + fn_) as f64;
            let hr = tn as f64 / 401.0;
            if round(acc, 2) == round(acc_pct, 2)
                && round(sp, 3) == round(stressed.0, 3)
                && round(sr, 3) == round(stressed.1, 3)
                && round(hp, 3) == round(healthy.0, 3)
                && round(hr, 3) == round(healthy.1, 3)
            {
                hits.push((tp, fp, fn_, tn));
            }
        }
    }
    hits
}

fn metric_oracle() -> Outcome {
    // all-stressed predictor on 734 stressed / 401 healthy
    let start = Instant::now();
    let truth: Vec<Label> = (0..1135)
        .map(|i| if i < 734 { Label::Stressed } else { Label::Healthy })
        .collect();
    let predicted = predict_labels(&Array1::from_elem(1135, 0.99), 0.5).map_err(|e| e.to_string())?;
    let cm = ConfusionMatrix::from_labels(&truth, &predicted).map_err(|e| e.to_string())?;
    let r = report_for(cm)?;
    within("all-stressed accuracy %", 100.0 * r.accuracy, 64.67, ACCURACY_TOL_PP)?;
    within("all-stressed accuracy oracle", r.accuracy, 734.0 / 1135.0, 1e-15)?;
    ensure(r.stressed.recall == Some(1.0), || {
        format!("stressed recall {:?}", r.stressed.recall)
    })?;
    ensure(r.healthy.recall == Some(0.0), || {
        format!("healthy recall {:?}", r.healthy.recall)
    })?;
    let t1 = start.elapsed();

    let start = Instant::now();
    let cm = ConfusionMatrix {
        tp: 577,
        fp: 138,
        fn_: 157,
        tn: 263,
    };
    let r = report_for(cm)?;
    within("577/138/157/263 accuracy %", 100.0 * r.accuracy, 74.01, ACCURACY_TOL_PP)?;
    within("577/138/157/263 accuracy oracle", r.accuracy, 840.0 / 1135.0, 1e-15)?;
    ensure(cm.fp + cm.fn_ == 295 && cm.total() == 1135, || {
        "misclassification count".into()
    })?;
    let t2 = start.elapsed();

    let start = Instant::now();
    let oracle = brute_force_matrices(90.75, (0.967, 0.887), (0.820, 0.945));
    ensure(oracle == [(651, 22, 83, 379)], || {
        format!("brute-force matrices {oracle:?}")
    })?;
    let r = report_for(ConfusionMatrix {
        tp: 651,
        fp: 22,
        fn_: 83,
        tn: 379,
    })?;
    within("651/22/83/379 accuracy %", 100.0 * r.accuracy, 90.75, ACCURACY_TOL_PP)?;
    within(
        "stressed precision",
        class_value(r.stressed.precision, "stressed precision")?,
        0.967,
        CLASS_METRIC_TOL,
    )?;
    within(
        "stressed recall",
        class_value(r.stressed.recall, "stressed recall")?,
        0.887,
        CLASS_METRIC_TOL,
    )?;
    within(
        "healthy precision",
        class_value(r.healthy.precision, "healthy precision")?,
        0.820,
        CLASS_METRIC_TOL,
    )?;
    within(
        "healthy recall",
        class_value(r.healthy.recall, "healthy recall")?,
        0.945,
        CLASS_METRIC_TOL,
    )?;
    let t3 = start.elapsed();

    for (name, t) in [("all-stressed", t1), ("577/138/157/263", t2), ("651/22/83/379", t3)] {
        ensure(t < METRIC_RUNTIME, || format!("{name} took {t:?}"))?;
    }
    Ok(format!(
        "64.67% / 74.01% (295 wrong) / 90.75% with per-class metrics; runtimes {t1:.1?}, {t2:.1?}, {t3:.1?}"
    ))
}

fn schedule_exactness() -> Outcome {
    let c = TrainingConfig::default();
    for (epoch, want) in [(0, 0.001), (2, 0.0009), (4, 0.00081), (10, 0.001 * 0.9f64.powi(5))] {
        within(&format!("lr at epoch {epoch}"), lr_at_epoch(&c, epoch), want, LR_TOL)?;
    }
    Ok("epochs 0, 2, 4, 10".into())
}

fn head_parameter_count() -> Outcome {
    // enumeration oracle: kernel + bias per layer, 1024 -> 128 -> 64 -> 1
    let enumerated = [(1024, 128), (128, 64), (64, 1)]
        .iter()
        .map(|&(i, o)| i * o + o)
        .sum::<usize>();
    let formula = HeadConfig::default().param_count(1024);
    let model =
        build_classifier(&BackboneSpec::toy((8, 8), 1024), &HeadConfig::default(), 0).map_err(|e| e.to_string())?;
    let built: usize = model
        .named_params()
        .iter()
        .filter(|(n, _)| n.starts_with("head."))
        .map(|(_, t)| t.len())
        .sum();
    ensure(
        enumerated == HEAD_PARAMS && formula == HEAD_PARAMS && built == HEAD_PARAMS,
        || format!("enumerated {enumerated}, formula {formula}, built {built}"),
    )?;
    Ok(format!("{HEAD_PARAMS} trainable head parameters"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut model =
        build_classifier(&BackboneSpec::toy((16, 16), 8), &HeadConfig::default(), 3).map_err(|e| e.to_string())?;
    perturb_biases(&mut model, 0.05, 30);
    let mut r = seeded(4);
    let x = Array4::from_shape_fn((4, 3, 16, 16), |_| r.gen_range(0.0..1.0));
    let y = Array1::from(vec![0.0, 1.0, 0.0, 1.0]);
    let (_, _, grads) = loss_and_gradients(&model, &x, &y, &mut seeded(9)).map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = grads.params.iter().map(|g| g.iter().copied().collect()).collect();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, name) in names.iter().enumerate().filter(|(_, n)| n.starts_with("head.")) {
        for (j, &a) in analytic[i].iter().enumerate() {
            let n = loss_central_difference(&mut model, &x, &y, 9, (i, j), GRAD_STEP).map_err(|e| e.to_string())?;
            let e = relative_error(a, n);
            if e > worst {
                worst = e;
            }
            ensure(e.is_finite(), || format!("{name}[{j}] non-finite"))?;
            checked += 1;
        }
    }
    ensure(worst < GRAD_TOL, || {
        format!("head max relative error {worst:e} over {checked} parameters")
    })?;

    let saliency_model =
        build_classifier(&BackboneSpec::toy((32, 32), 16), &HeadConfig::default(), 11).map_err(|e| e.to_string())?;
    let mut r = seeded(12);
    let image = Array3::from_shape_fn((32, 32, 3), |_| r.gen_range(0.0..1.0));
    let (_, grad) = input_gradient_saliency(&saliency_model, &image).map_err(|e| e.to_string())?;
    let coords = sample_coordinates((32, 32, 3), SALIENCY_PIXELS, 13);
    let numeric = brute_force_grad(&saliency_model, &image, SALIENCY_STEP, &coords).map_err(|e| e.to_string())?;
    let saliency_worst = coords
        .iter()
        .zip(&numeric)
        .map(|(&(y, x, c), &n)| relative_error(grad[[y, x, c]], n))
        .fold(0.0, f64::max);
    ensure(saliency_worst < SALIENCY_TOL, || {
        format!("saliency max relative error {saliency_worst:e}")
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < GRAD_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "head {checked} params max rel err {worst:.2e}; saliency {SALIENCY_PIXELS} pixels max rel err {saliency_worst:.2e}; {elapsed:.1?}"
    ))
}

fn standardization() -> Outcome {
    let mut r = seeded(77);
    for k in 0..STANDARDIZE_MAPS {
        let (h, w) = (r.gen_range(2..48), r.gen_range(2..48));
        let scale = 10f64.powf(r.gen_range(-6.0..6.0));
        let offset = r.gen_range(-1e3..1e3);
        let map = Array2::from_shape_fn((h, w), |_| offset + scale * r.gen_range(0.0..1.0));
        let (z, warning) = standardize(&map);
        ensure(warning.is_none() && z.dim() == (h, w), || {
            format!("map {k}: warning or shape change")
        })?;
        let n = z.len() as f64;
        let mean = z.sum() / n;
        let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        ensure(
            mean.abs() < STANDARDIZE_TOL && (std - 1.0).abs() < STANDARDIZE_TOL,
            || format!("map {k}: mean {mean:e}, std {std}"),
        )?;
    }
    for value in [0.0, 1.0, -3.5, 1e9] {
        let (z, warning) = standardize(&Array2::from_elem((7, 9), value));
        ensure(warning == Some(SaliencyWarning::ConstantMap), || {
            format!("constant {value}: no warning")
        })?;
        ensure(z.iter().all(|&v| v == 0.0), || {
            format!("constant {value}: not the zero map")
        })?;
    }
    Ok(format!(
        "{STANDARDIZE_MAPS} random maps; constant maps give the zero map with a warning"
    ))
}

fn first_minimum(trace: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in trace.iter().enumerate() {
        if v < trace[best] {
            best = i;
        }
    }
    best
}

fn run_tracker(trace: &[f64]) -> (Option<usize>, Vec<usize>) {
    let mut tracker = CheckpointTracker::default();
    let saved = (0..trace.len()).filter(|&e| tracker.observe(e, trace[e])).collect();
    (tracker.best_epoch(), saved)
}

/// Trace of `len` epochs whose first minimum is at `best`, with a later tie.
fn trace_with_best(len: usize, best: usize) -> Vec<f64> {
    (0..len)
        .map(|e| {
            if e == best || (e > best && e % 7 == 0) {
                0.1
            } else {
                1.0 / (1.0 + e as f64) + 0.2
            }
        })
        .collect()
}

fn checkpoint_selection() -> Outcome {
    let fixed: Vec<(Vec<f64>, usize, Vec<usize>)> = vec![
        (vec![0.9, 0.5, 0.7, 0.4, 0.6], 3, vec![0, 1, 3]),
        (vec![0.5, 0.5, 0.4, 0.4, 0.45], 2, vec![0, 2]),
        (vec![0.3, 0.3, 0.3], 0, vec![0]),
    ];
    for (trace, best, saved) in &fixed {
        let got = run_tracker(trace);
        ensure(got == (Some(*best), saved.clone()), || {
            format!("{trace:?} gave {got:?}")
        })?;
    }
    // runs of 30/60/60/30 epochs with minima at epochs 30/59/55/28 (1-indexed)
    for (len, best) in [(30, 29), (60, 58), (60, 54), (30, 27)] {
        let trace = trace_with_best(len, best);
        let got = run_tracker(&trace).0;
        ensure(got == Some(best), || {
            format!("{len}-epoch trace: best {got:?}, expected {best}")
        })?;
    }
    let mut r = seeded(5);
    for _ in 0..1000 {
        let len = r.gen_range(1..40);
        // coarse values make ties common
        let trace: Vec<f64> = (0..len).map(|_| r.gen_range(0..6) as f64 / 4.0).collect();
        let (best, saved) = run_tracker(&trace);
        ensure(best == Some(first_minimum(&trace)), || format!("{trace:?}: {best:?}"))?;
        ensure(saved.last() == best.as_ref(), || {
            format!("{trace:?}: last save {saved:?}")
        })?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        n_per_class: 40,
        patch_size: 16,
        ..SynthSpec::default()
    };
    generate_dataset(&spec, &dir.path().join("scenes")).map_err(|e| e.to_string())?;
    let cfg = RunConfig::parse(
        "out = \"run\"\ndata.annotations = \"scenes\"\nmodel.backbone = \"toy_cnn\"\n\
         model.weights = \"random\"\nmodel.feature_dim = 8\nbatch.target_height = 16\n\
         batch.target_width = 16\nbatch.batch_size = 16\ntrain.epochs = 4\n",
        dir.path(),
    )
    .map_err(|e| e.to_string())?;
    cmd_prepare(&cfg).map_err(|e| e.to_string())?;
    let summary = cmd_train(&cfg).map_err(|e| e.to_string())?;
    let min = summary.history.min_val_loss().ok_or("empty history")?;
    let model = ClassifierModel::load(&best_checkpoint(&cfg.out)).map_err(|e| e.to_string())?;
    let manifest = read_manifest(&cfg.out).map_err(|e| e.to_string())?;
    let spec = cfg.batch_spec().map_err(|e| e.to_string())?;
    let (reloaded, _) = evaluate_loss(&model, &manifest.val, &spec).map_err(|e| e.to_string())?;
    within("reloaded val loss", reloaded, min, RELOAD_TOL)?;
    Ok(format!(
        "fixed, reference and 1000 random traces; reload reproduces min val loss (diff {:.1e})",
        (reloaded - min).abs()
    ))
}

const E2E_CONFIG: &str = "\
out = \"run\"
data.annotations = \"train_scenes\"
data.test_annotations = \"test_scenes\"
model.backbone = \"toy_cnn\"
model.weights = \"random\"
model.feature_dim = 16
batch.batch_size = 16
train.epochs = 5
";

fn drought(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_drought"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// synthesize -> prepare -> train -> evaluate -> explain in `dir`; returns
/// the output directory and the wall time.
fn full_run(dir: &Path) -> Result<(PathBuf, Duration), String> {
    let start = Instant::now();
    fs::write(dir.join("run.toml"), E2E_CONFIG).map_err(|e| e.to_string())?;
    drought(
        dir,
        &["synthesize", "train_scenes", "--n-per-class", "250", "--seed", "7"],
    )?;
    drought(
        dir,
        &["synthesize", "test_scenes", "--n-per-class", "100", "--seed", "8"],
    )?;
    for step in ["prepare", "train", "evaluate", "explain"] {
        drought(dir, &[step, "--config", "run.toml"])?;
    }
    Ok((dir.join("run"), start.elapsed()))
}

fn pngs(dir: &Path) -> usize {
    fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
                .count()
        })
        .unwrap_or(0)
}

fn end_to_end(out: &Path, elapsed: Duration) -> Outcome {
    let config = RunConfig::load(&out.join("config.effective.toml")).map_err(|e| e.to_string())?;
    ensure(config.train.epochs <= E2E_MAX_EPOCHS, || {
        format!("{} epochs", config.train.epochs)
    })?;
    let history = read_history(&out.join("history.tsv")).map_err(|e| e.to_string())?;
    ensure(history.records.len() <= E2E_MAX_EPOCHS, || {
        "too many epochs recorded".into()
    })?;
    for file in [
        "manifest.tsv",
        "history.tsv",
        "report.txt",
        "confusion.tsv",
        "comparison.tsv",
        "predictions.tsv",
        "heatmap.txt",
        "checkpoints/best.ntar",
    ] {
        ensure(out.join(file).is_file(), || format!("missing {file}"))?;
    }
    ensure(pngs(&out.join("curves")) >= 2, || "missing curves/*.png".into())?;
    ensure(pngs(&out.join("saliency")) >= 2, || "missing saliency/*.png".into())?;
    let manifest = DatasetManifest::read(&out.join("manifest.tsv")).map_err(|e| e.to_string())?;
    ensure(!manifest.test.is_empty(), || "empty test partition".into())?;
    let report = fs::read_to_string(out.join("report.txt")).map_err(|e| e.to_string())?;
    let accuracy = MetricReport::accuracy_from_text(&report).ok_or("report lacks accuracy")?;
    ensure(accuracy >= E2E_MIN_ACCURACY, || format!("test accuracy {accuracy}"))?;
    ensure(elapsed < E2E_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "test accuracy {accuracy:.4} on {} patches, {} epochs, {elapsed:.1?}",
        manifest.test.len(),
        history.records.len()
    ))
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    for file in ["manifest.tsv", "history.tsv", "report.txt"] {
        let read = |d: &Path| fs::read(d.join(file)).map_err(|e| format!("{file}: {e}"));
        ensure(read(a)? == read(b)?, || format!("{file} differs between runs"))?;
    }
    Ok("manifest.tsv, history.tsv and report.txt identical across two runs".into())
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("metric oracle", metric_oracle()),
        ("schedule exactness", schedule_exactness()),
        ("head parameter count", head_parameter_count()),
        ("gradient correctness", gradient_correctness()),
        ("standardization", standardization()),
        ("checkpoint selection", checkpoint_selection()),
    ];

    let workspace = tempfile::tempdir().expect("temp dir");
    let runs: Vec<Result<(PathBuf, Duration), String>> = ["a", "b"]
        .iter()
        .map(|name| {
            let dir = workspace.path().join(name);
            fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            full_run(&dir)
        })
        .collect();
    results.push((
        "end-to-end desk scale",
        match &runs[0] {
            Ok((out, elapsed)) => end_to_end(out, *elapsed),
            Err(e) => Err(e.clone()),
        },
    ));
    results.push((
        "determinism",
        match (&runs[0], &runs[1]) {
            (Ok((a, _)), Ok((b, _))) => determinism(a, b),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        },
    ));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
