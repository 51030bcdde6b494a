//! Thresholded predictions, confusion matrix, derived metrics, and the
//! comparison against published baseline detectors.

mod baselines;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array1;

pub use baselines::{
    compare, comparison_tsv, parse_comparison_tsv, write_comparison, Baseline, ComparisonRow, BASELINES,
};

use crate::augment::{batch_stream, BatchSpec};
use crate::error::{Error, Result};
use crate::ingest::PatchRecord;
use crate::label::Label;
use crate::model::ClassifierModel;

/// `Stressed` when `p >= threshold`.
pub fn predict_labels(probabilities: &Array1<f64>, threshold: f64) -> Result<Vec<Label>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(probabilities
        .iter()
        .map(|&p| {
            if p >= threshold {
                Label::Stressed
            } else {
                Label::Healthy
            }
        })
        .collect())
}

/// One scored item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub truth: Label,
    pub predicted: Label,
    pub probability: f64,
}

/// Score every readable record of `records` in eval mode, in record order.
pub fn predict_records(
    model: &ClassifierModel,
    records: &[PatchRecord],
    spec: &BatchSpec,
    threshold: f64,
) -> Result<Vec<Prediction>> {
    predict_labels(&Array1::zeros(0), threshold)?;
    let spec = BatchSpec {
        shuffle: false,
        ..*spec
    };
    let mut out = Vec::with_capacity(records.len());
    for batch in batch_stream(records, None, &spec, 0)? {
        let p = model.predict(&batch.images)?;
        let labels = predict_labels(&p, threshold)?;
        for ((&i, predicted), &probability) in batch.indices.iter().zip(labels).zip(&p) {
            out.push(Prediction {
                truth: records[i].label,
                predicted,
                probability,
            });
        }
    }
    Ok(out)
}

const PREDICTION_HEADER: &str = "truth\tpredicted\tprobability";

/// Prediction log, one row per item; probabilities in shortest exact form.
pub fn predictions_tsv(predictions: &[Prediction]) -> String {
    let mut out = format!("{PREDICTION_HEADER}\n");
    for p in predictions {
        let _ = writeln!(out, "{}\t{}\t{}", p.truth, p.predicted, p.probability);
    }
    out
}

/// Parse a prediction log. The `predicted` column may be empty, in which case
/// it is derived from `probability` at `threshold`.
pub fn parse_predictions_tsv(text: &str, threshold: f64) -> Result<Vec<Prediction>> {
    predict_labels(&Array1::zeros(0), threshold)?;
    let bad = |m: String| Error::InvalidArgument(format!("prediction log: {m}"));
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') || line == PREDICTION_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields in '{line}'")));
        }
        let truth: Label = f[0].parse().map_err(|_| bad(format!("bad label '{}'", f[0])))?;
        let probability: f64 = f[2].parse().map_err(|_| bad(format!("bad probability '{}'", f[2])))?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(bad(format!("probability {probability} outside [0, 1]")));
        }
        let predicted = if f[1].is_empty() {
            if probability >= threshold {
                Label::Stressed
            } else {
                Label::Healthy
            }
        } else {
            f[1].parse().map_err(|_| bad(format!("bad label '{}'", f[1])))?
        };
        out.push(Prediction {
            truth,
            predicted,
            probability,
        });
    }
    Ok(out)
}

/// Counts with `Stressed` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch {
                left: truth.len(),
                right: predicted.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (Label::Stressed, Label::Stressed) => cm.tp += 1,
                (Label::Healthy, Label::Stressed) => cm.fp += 1,
                (Label::Stressed, Label::Healthy) => cm.fn_ += 1,
                (Label::Healthy, Label::Healthy) => cm.tn += 1,
            }
        }
        Ok(cm)
    }

    pub fn from_predictions(predictions: &[Prediction]) -> Self {
        let truth: Vec<Label> = predictions.iter().map(|p| p.truth).collect();
        let pred: Vec<Label> = predictions.iter().map(|p| p.predicted).collect();
        Self::from_labels(&truth, &pred).expect("equal lengths")
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts for the given class taken as positive.
    pub fn for_class(&self, positive: Label) -> ConfusionMatrix {
        match positive {
            Label::Stressed => *self,
            Label::Healthy => ConfusionMatrix {
                tp: self.tn,
                fp: self.fn_,
                fn_: self.fp,
                tn: self.tp,
            },
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics are `None` where their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    /// Positive class `Stressed`.
    pub stressed: ClassMetrics,
    /// Positive class `Healthy`.
    pub healthy: ClassMetrics,
}

fn class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_);
    ClassMetrics {
        precision,
        recall,
        f1,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(MetricReport {
        matrix: *cm,
        accuracy: (cm.tp + cm.tn) as f64 / n as f64,
        stressed: class_metrics(cm),
        healthy: class_metrics(&cm.for_class(Label::Healthy)),
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl MetricReport {
    pub fn class(&self, label: Label) -> &ClassMetrics {
        match label {
            Label::Stressed => &self.stressed,
            Label::Healthy => &self.healthy,
        }
    }

    /// `key = value` lines; metrics with a zero denominator read `undefined`.
    pub fn to_text(&self) -> String {
        let m = &self.matrix;
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", m.total());
        let _ = writeln!(out, "tp = {}", m.tp);
        let _ = writeln!(out, "fp = {}", m.fp);
        let _ = writeln!(out, "fn = {}", m.fn_);
        let _ = writeln!(out, "tn = {}", m.tn);
        let _ = writeln!(out, "accuracy = {:.6}", self.accuracy);
        for label in [Label::Stressed, Label::Healthy] {
            let c = self.class(label);
            let _ = writeln!(out, "{label}.precision = {}", fmt_metric(c.precision));
            let _ = writeln!(out, "{label}.recall = {}", fmt_metric(c.recall));
            let _ = writeln!(out, "{label}.f1 = {}", fmt_metric(c.f1));
            let _ = writeln!(out, "{label}.specificity = {}", fmt_metric(c.specificity));
        }
        out
    }

    /// Recover the confusion counts from [`MetricReport::to_text`].
    pub fn matrix_from_text(text: &str) -> Option<ConfusionMatrix> {
        let get = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix(" = "))
                .and_then(|v| v.trim().parse().ok())
        };
        Some(ConfusionMatrix {
            tp: get("tp")?,
            fp: get("fp")?,
            fn_: get("fn")?,
            tn: get("tn")?,
        })
    }

    /// Parse the `accuracy` line back out of [`MetricReport::to_text`].
    pub fn accuracy_from_text(text: &str) -> Option<f64> {
        text.lines()
            .find_map(|l| l.strip_prefix("accuracy = "))
            .and_then(|v| v.trim().parse().ok())
    }
}

/// Rows are true labels, columns predictions.
pub fn confusion_tsv(cm: &ConfusionMatrix) -> String {
    format!(
        "true\\predicted\thealthy\tstressed\nhealthy\t{}\t{}\nstressed\t{}\t{}\n",
        cm.tn, cm.fp, cm.fn_, cm.tp
    )
}

pub fn write_report(report: &MetricReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::write(out_dir, e))?;
    let report_path = out_dir.join("report.txt");
    fs::write(&report_path, report.to_text()).map_err(|e| Error::write(&report_path, e))?;
    let cm_path = out_dir.join("confusion.tsv");
    fs::write(&cm_path, confusion_tsv(&report.matrix)).map_err(|e| Error::write(&cm_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = Array1::from(vec![0.5, 0.4999, 1.0, 0.0]);
        let l = predict_labels(&p, 0.5).unwrap();
        assert_eq!(
            l,
            vec![Label::Stressed, Label::Healthy, Label::Stressed, Label::Healthy]
        );
        assert!(predict_labels(&p, 1.5).is_err());
        assert!(predict_labels(&p, f64::NAN).is_err());
    }

    #[test]
    fn all_stressed_on_reference_test_set() {
        let mut truth = vec![Label::Stressed; 734];
        truth.extend(vec![Label::Healthy; 401]);
        let pred = vec![Label::Stressed; 1135];
        let r = compute_metrics(&ConfusionMatrix::from_labels(&truth, &pred).unwrap()).unwrap();
        assert!((r.accuracy * 100.0 - 64.67).abs() < 0.01);
        assert_eq!(r.stressed.recall, Some(1.0));
        assert_eq!(r.stressed.specificity, Some(0.0));
        assert_eq!(r.healthy.precision, None);
        assert!(r.to_text().contains("healthy.precision = undefined"));
    }

    #[test]
    fn reference_matrices() {
        let r = compute_metrics(&cm(577, 138, 157, 263)).unwrap();
        assert!((r.accuracy * 100.0 - 74.01).abs() < 0.01);
        let d = compute_metrics(&cm(651, 22, 83, 379)).unwrap();
        assert!((d.accuracy * 100.0 - 90.75).abs() < 0.01);
        assert!((d.stressed.precision.unwrap() - 0.967).abs() < 5e-4);
        assert!((d.stressed.recall.unwrap() - 0.887).abs() < 5e-4);
    }

    #[test]
    fn empty_matrix_error() {
        assert!(matches!(compute_metrics(&cm(0, 0, 0, 0)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn confusion_table_layout() {
        let t = confusion_tsv(&cm(4, 3, 2, 1));
        assert_eq!(t.lines().nth(1), Some("healthy\t1\t3"));
        assert_eq!(t.lines().nth(2), Some("stressed\t2\t4"));
    }

    #[test]
    fn prediction_log_round_trip() {
        let preds = vec![
            Prediction {
                truth: Label::Stressed,
                predicted: Label::Stressed,
                probability: 0.9,
            },
            Prediction {
                truth: Label::Healthy,
                predicted: Label::Stressed,
                probability: 0.5,
            },
            Prediction {
                truth: Label::Healthy,
                predicted: Label::Healthy,
                probability: 1.0 / 3.0,
            },
        ];
        assert_eq!(parse_predictions_tsv(&predictions_tsv(&preds), 0.5).unwrap(), preds);
        let derived = parse_predictions_tsv("stressed\t\t0.2\n", 0.5).unwrap();
        assert_eq!(derived[0].predicted, Label::Healthy);
        assert!(parse_predictions_tsv("stressed\t\t1.2\n", 0.5).is_err());
        assert!(parse_predictions_tsv("weed\t\t0.2\n", 0.5).is_err());
    }

    #[test]
    fn report_parses_accuracy() {
        let r = compute_metrics(&cm(1, 1, 1, 1)).unwrap();
        assert_eq!(MetricReport::accuracy_from_text(&r.to_text()), Some(0.5));
        let m = cm(7, 3, 2, 9);
        let text = compute_metrics(&m).unwrap().to_text();
        assert_eq!(MetricReport::matrix_from_text(&text), Some(m));
    }

    #[test]
    fn oracle_tally_ten_thousand() {
        use rand::Rng;
        let mut r = crate::rng::seeded(5);
        let lab = |b: bool| if b { Label::Stressed } else { Label::Healthy };
        let pairs: Vec<(Label, Label)> = (0..10_000).map(|_| (lab(r.gen()), lab(r.gen()))).collect();
        let (truth, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let rep = compute_metrics(&ConfusionMatrix::from_labels(&truth, &pred).unwrap()).unwrap();
        let mut correct = 0.0;
        let mut pred_s = 0.0;
        let mut hit_s = 0.0;
        for &(t, p) in &pairs {
            if t == p {
                correct += 1.0;
            }
            if p == Label::Stressed {
                pred_s += 1.0;
                if t == Label::Stressed {
                    hit_s += 1.0;
                }
            }
        }
        assert!((rep.accuracy - correct / 1e4).abs() < 1e-12);
        assert!((rep.stressed.precision.unwrap() - hit_s / pred_s).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            let m = cm(tp, fp, fn_, tn);
            prop_assume!(m.total() > 0);
            let r = compute_metrics(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
            for c in [r.stressed, r.healthy] {
                for v in [c.precision, c.recall, c.f1, c.specificity].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            // accuracy is the support-weighted mean of the two recalls
            let pos = (tp + fn_) as f64;
            let neg = (tn + fp) as f64;
            let weighted = r.stressed.recall.unwrap_or(0.0) * pos + r.healthy.recall.unwrap_or(0.0) * neg;
            prop_assert!((weighted / (pos + neg) - r.accuracy).abs() < 1e-12);
        }

        #[test]
        fn threshold_monotone(p in proptest::collection::vec(0.0f64..=1.0, 1..100),
                              y in proptest::collection::vec(any::<bool>(), 100),
                              t0 in 0.0f64..=1.0, dt in 0.0f64..=1.0) {
            let t1 = (t0 + dt).min(1.0);
            let truth: Vec<Label> = y[..p.len()].iter().map(|&b| if b { Label::Stressed } else { Label::Healthy }).collect();
            let p = Array1::from(p);
            let lo = ConfusionMatrix::from_labels(&truth, &predict_labels(&p, t0).unwrap()).unwrap();
            let hi = ConfusionMatrix::from_labels(&truth, &predict_labels(&p, t1).unwrap()).unwrap();
            prop_assert!(hi.fp <= lo.fp);
            prop_assert!(hi.fn_ >= lo.fn_);
        }

        #[test]
        fn metric_identities(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            let m = cm(tp, fp, fn_, tn);
            prop_assume!(m.total() > 0);
            let r = compute_metrics(&m).unwrap();
            prop_assert!((r.accuracy - (1.0 - (fp + fn_) as f64 / m.total() as f64)).abs() < 1e-12);
            if let Some(rec) = r.stressed.recall {
                prop_assert!((rec + fn_ as f64 / (tp + fn_) as f64 - 1.0).abs() < 1e-12);
            }
            if let Some(p) = r.healthy.precision {
                prop_assert!((p - tn as f64 / (tn + fn_) as f64).abs() < 1e-15);
            }
            if let Some(rc) = r.healthy.recall {
                prop_assert!((rc - tn as f64 / (tn + fp) as f64).abs() < 1e-15);
            }
        }

        #[test]
        fn counts_match_labels(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let lab = |b: bool| if b { Label::Stressed } else { Label::Healthy };
            let truth: Vec<Label> = pairs.iter().map(|p| lab(p.0)).collect();
            let pred: Vec<Label> = pairs.iter().map(|p| lab(p.1)).collect();
            let m = ConfusionMatrix::from_labels(&truth, &pred).unwrap();
            prop_assert_eq!(m.total() as usize, pairs.len());
            prop_assert_eq!(m.tp as usize, pairs.iter().filter(|p| p.0 && p.1).count());
            prop_assert_eq!(m.for_class(Label::Healthy).for_class(Label::Healthy), m);
        }
    }
}
