//! Subcommand bodies: thin compositions of the library modules that read and
//! write artifacts under one output directory.
//!
//! ```text
//! <out>/config.effective.toml
//! <out>/manifest.tsv
//! <out>/patches/{train,test}/{healthy,stressed}/*.png
//! <out>/checkpoints/epoch_NNN.ntar, best.ntar
//! <out>/history.tsv, curves/{loss,accuracy}.png, curves/history.tsv
//! <out>/predictions.tsv, report.txt, confusion.tsv
//! <out>/comparison.tsv, comparison/{stressed,healthy}.png
//! <out>/heatmap.txt, saliency/<image>.png, saliency/<image>_overlay.png,
//!       saliency/<image>_gradcam.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::augment::{load_image, resize_bilinear};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluate::{
    compare, compute_metrics, parse_predictions_tsv, predict_records, predictions_tsv, write_comparison, write_report,
    ConfusionMatrix, MetricReport,
};
use crate::explain::{explain_image, gradcam_last_conv, render_side_by_side, standardize, write_heatmap, SaliencyMap};
use crate::ingest::{
    class_counts, extract_all, load_annotations, split_manifest_with, ClassCounts, DatasetManifest, Partition,
};
use crate::model::{build_classifier, trainable_param_count, ClassifierModel};
use crate::train::{learning_curves, run_training, write_history, TrainingHistory};

pub const MANIFEST: &str = "manifest.tsv";
pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::write(path, e))
}

pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

pub fn best_checkpoint(out: &Path) -> PathBuf {
    checkpoint_dir(out).join("best.ntar")
}

pub fn read_manifest(out: &Path) -> Result<DatasetManifest> {
    let path = out.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "{} not found; run prepare first",
            path.display()
        )));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    DatasetManifest::from_tsv(&text, out)
}

#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub manifest: DatasetManifest,
    pub counts: ClassCounts,
    pub skipped_degenerate: usize,
}

/// Extract patches, split them, and write the manifest plus the effective
/// configuration.
pub fn cmd_prepare(config: &RunConfig) -> Result<PrepareSummary> {
    let out = &config.out;
    ensure_dir(out)?;
    write_text(&out.join(EFFECTIVE_CONFIG), &config.to_flat_text())?;
    let annotations = config
        .data
        .annotations
        .as_ref()
        .ok_or_else(|| Error::Config("data.annotations is required".into()))?;
    let patch_dir = config.patch_dir();
    let scenes = load_annotations(annotations)?;
    let train = extract_all(&scenes, &patch_dir.join("train"))?;
    let mut skipped = train.skipped_degenerate;
    let mut manifest = split_manifest_with(&train.records, &config.split_options())?;
    if let Some(test_annotations) = &config.data.test_annotations {
        let test_scenes = load_annotations(test_annotations)?;
        let test = extract_all(&test_scenes, &patch_dir.join("test"))?;
        skipped += test.skipped_degenerate;
        manifest = manifest.with_test(test.records);
    }
    write_text(&out.join(MANIFEST), &manifest.to_tsv(out))?;
    let counts = class_counts(&manifest);
    info!(
        "prepared {} train, {} val, {} test patches",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(PrepareSummary {
        manifest,
        counts,
        skipped_degenerate: skipped,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: TrainingHistory,
    pub checkpoint: PathBuf,
    pub trainable_params: usize,
}

/// Train on the prepared manifest; writes history, curves and checkpoints.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    let out = &config.out;
    let manifest = read_manifest(out)?;
    let mut model = build_classifier(&config.backbone_spec()?, &config.head_config(), config.seed)?;
    let trainable_params = trainable_param_count(&model);
    info!("model has {trainable_params} trainable parameters");
    let policy = config.augmentation_policy()?;
    let policy = config.augment.enabled.then_some(&policy);
    let result = run_training(
        &mut model,
        &manifest,
        policy,
        &config.training_config()?,
        &config.batch_spec()?,
        &checkpoint_dir(out),
    );
    let history = match result {
        Ok((history, _store)) => history,
        Err(Error::DivergenceDetected { epoch, history }) => {
            // keep the partial record before reporting
            write_history(&history, &out.join("history.tsv"))?;
            return Err(Error::DivergenceDetected { epoch, history });
        }
        Err(e) => return Err(e),
    };
    write_history(&history, &out.join("history.tsv"))?;
    learning_curves(&history, &out.join("curves"))?;
    Ok(TrainSummary {
        history,
        checkpoint: best_checkpoint(out),
        trainable_params,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub report: MetricReport,
    pub partition: Option<Partition>,
}

fn finish_evaluation(config: &RunConfig, matrix: &ConfusionMatrix) -> Result<MetricReport> {
    let report = compute_metrics(matrix)?;
    write_report(&report, &config.out)?;
    let name = format!("pipeline ({})", config.model.backbone);
    write_comparison(&compare(&report, &name)?, &config.out)?;
    Ok(report)
}

/// Score the test partition (validation when there is no test partition) with
/// the checkpoint, or read a stored prediction log instead of running a model.
pub fn cmd_evaluate(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
) -> Result<EvaluateSummary> {
    let out = &config.out;
    ensure_dir(out)?;
    let threshold = config.evaluate.threshold;
    if let Some(log) = predictions {
        let text = fs::read_to_string(log).map_err(|e| Error::io(log, e))?;
        let preds = parse_predictions_tsv(&text, threshold)?;
        let report = finish_evaluation(config, &ConfusionMatrix::from_predictions(&preds))?;
        return Ok(EvaluateSummary {
            report,
            partition: None,
        });
    }
    let manifest = read_manifest(out)?;
    let (partition, records) = if manifest.test.is_empty() {
        warn!("no test partition; evaluating on validation");
        (Partition::Val, &manifest.val)
    } else {
        (Partition::Test, &manifest.test)
    };
    let default_ckpt = best_checkpoint(out);
    let model = ClassifierModel::load(checkpoint.unwrap_or(&default_ckpt))?;
    let preds = predict_records(&model, records, &config.batch_spec()?, threshold)?;
    write_text(&out.join("predictions.tsv"), &predictions_tsv(&preds))?;
    let report = finish_evaluation(config, &ConfusionMatrix::from_predictions(&preds))?;
    Ok(EvaluateSummary {
        report,
        partition: Some(partition),
    })
}

#[derive(Debug, Clone)]
pub struct ExplainSummary {
    pub image: PathBuf,
    pub probability: f64,
    pub composite: PathBuf,
    pub overlay: PathBuf,
    pub gradcam: PathBuf,
    pub constant_map: bool,
}

/// Explain one image; without `image`, the first test (else validation)
/// patch is used.
pub fn cmd_explain(config: &RunConfig, checkpoint: Option<&Path>, image: Option<&Path>) -> Result<ExplainSummary> {
    let out = &config.out;
    let default_ckpt = best_checkpoint(out);
    let model = ClassifierModel::load(checkpoint.unwrap_or(&default_ckpt))?;
    let image_path = match image {
        Some(p) => p.to_path_buf(),
        None => {
            let m = read_manifest(out)?;
            m.test
                .first()
                .or_else(|| m.val.first())
                .map(|r| r.patch_path.clone())
                .ok_or_else(|| Error::InvalidArgument("no image given and manifest is empty".into()))?
        }
    };
    let (h, w) = model.backbone.input_size;
    let pixels = resize_bilinear(&load_image(&image_path)?, h, w) * config.augment.rescale;
    let explanation = explain_image(&model, &pixels, Some(&image_path))?;
    let saliency = out.join("saliency");
    ensure_dir(&saliency)?;
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let files = render_side_by_side(&pixels, &explanation.map, &saliency.join(format!("{stem}.png")))?;
    write_heatmap(&explanation.heatmap, &out.join("heatmap.txt"))?;

    let cam = gradcam_last_conv(&model, &pixels)?;
    let (values, warning) = standardize(&cam);
    let cam_map = SaliencyMap {
        values,
        standardized: true,
        source_image: Some(image_path.clone()),
        model_output: explanation.map.model_output,
        warning,
    };
    let gradcam = render_side_by_side(&pixels, &cam_map, &saliency.join(format!("{stem}_gradcam.png")))?;
    // only the composite is kept for Grad-CAM
    let _ = fs::remove_file(&gradcam.overlay);
    Ok(ExplainSummary {
        image: image_path,
        probability: explanation.map.model_output,
        composite: files.composite,
        overlay: files.overlay,
        gradcam: gradcam.composite,
        constant_map: explanation.map.warning.is_some(),
    })
}

/// Rebuild the comparison table and charts from an existing `report.txt`.
pub fn cmd_compare(config: &RunConfig) -> Result<MetricReport> {
    let path = config.out.join("report.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let matrix = MetricReport::matrix_from_text(&text)
        .ok_or_else(|| Error::InvalidArgument(format!("{} lacks confusion counts", path.display())))?;
    let report = compute_metrics(&matrix)?;
    let name = format!("pipeline ({})", config.model.backbone);
    write_comparison(&compare(&report, &name)?, &config.out)?;
    Ok(report)
}
