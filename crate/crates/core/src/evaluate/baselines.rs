use std::fs;
use std::path::Path;

use super::MetricReport;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::plot;

/// Published precision/recall of a detector on the same two classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub name: &'static str,
    pub stressed_precision: f64,
    pub stressed_recall: f64,
    pub healthy_precision: f64,
    pub healthy_recall: f64,
}

const fn row(name: &'static str, sp: f64, sr: f64, hp: f64, hr: f64) -> Baseline {
    Baseline {
        name,
        stressed_precision: sp,
        stressed_recall: sr,
        healthy_precision: hp,
        healthy_recall: hr,
    }
}

/// Reference detectors, transcribed; never recomputed.
pub const BASELINES: [Baseline; 5] = [
    row("Retina-Unet-Ag", 0.702, 0.841, 0.659, 0.832),
    row("Mask R-CNN", 0.700, 0.809, 0.644, 0.769),
    row("RetinaNet", 0.698, 0.795, 0.578, 0.899),
    row("Faster R-CNN", 0.781, 0.654, 0.630, 0.891),
    row("Yolo v3", 0.407, 0.882, 0.541, 0.855),
];

/// One table row; `None` marks an undefined metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    /// Stressed precision, stressed recall, healthy precision, healthy recall.
    pub values: [Option<f64>; 4],
}

impl From<&Baseline> for ComparisonRow {
    fn from(b: &Baseline) -> Self {
        ComparisonRow {
            name: b.name.to_string(),
            values: [
                Some(b.stressed_precision),
                Some(b.stressed_recall),
                Some(b.healthy_precision),
                Some(b.healthy_recall),
            ],
        }
    }
}

/// Baseline rows followed by the pipeline's row.
pub fn compare(report: &MetricReport, pipeline_name: &str) -> Result<Vec<ComparisonRow>> {
    if report.matrix.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut rows: Vec<ComparisonRow> = BASELINES.iter().map(ComparisonRow::from).collect();
    let (s, h) = (report.class(Label::Stressed), report.class(Label::Healthy));
    rows.push(ComparisonRow {
        name: pipeline_name.to_string(),
        values: [s.precision, s.recall, h.precision, h.recall],
    });
    Ok(rows)
}

const HEADER: &str = "model\tstressed_precision\tstressed_recall\thealthy_precision\thealthy_recall";

pub fn comparison_tsv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{HEADER}\n");
    for r in rows {
        out.push_str(&r.name);
        for v in r.values {
            out.push('\t');
            match v {
                Some(v) => out.push_str(&v.to_string()),
                None => out.push_str("undefined"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_comparison_tsv(text: &str) -> Result<Vec<ComparisonRow>> {
    let bad = |m: String| Error::InvalidArgument(format!("comparison table: {m}"));
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields in '{line}'")));
        }
        let mut values = [None; 4];
        for (slot, s) in values.iter_mut().zip(&f[1..]) {
            if *s != "undefined" {
                *slot = Some(s.parse().map_err(|_| bad(format!("bad number '{s}'")))?);
            }
        }
        rows.push(ComparisonRow {
            name: f[0].to_string(),
            values,
        });
    }
    Ok(rows)
}

/// Write `comparison.tsv` and one grouped bar chart per class under
/// `out_dir/comparison/` (`stressed.png`, `healthy.png`; precision then
/// recall per model, in table order).
pub fn write_comparison(rows: &[ComparisonRow], out_dir: &Path) -> Result<()> {
    let charts = out_dir.join("comparison");
    fs::create_dir_all(&charts).map_err(|e| Error::write(&charts, e))?;
    let table = out_dir.join("comparison.tsv");
    fs::write(&table, comparison_tsv(rows)).map_err(|e| Error::write(&table, e))?;
    for (label, offset) in [(Label::Stressed, 0), (Label::Healthy, 2)] {
        let groups: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.values[offset..offset + 2].iter().map(|v| v.unwrap_or(0.0)).collect())
            .collect();
        plot::grouped_bar_chart(&charts.join(format!("{label}.png")), &groups)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{compute_metrics, ConfusionMatrix};

    fn densenet() -> MetricReport {
        compute_metrics(&ConfusionMatrix {
            tp: 651,
            fp: 22,
            fn_: 83,
            tn: 379,
        })
        .unwrap()
    }

    #[test]
    fn pipeline_row_leads_stressed_precision() {
        let rows = compare(&densenet(), "pipeline").unwrap();
        assert_eq!(rows.len(), 6);
        let best = rows
            .iter()
            .max_by(|a, b| a.values[0].partial_cmp(&b.values[0]).unwrap())
            .unwrap();
        assert_eq!(best.name, "pipeline");
        for (got, want) in rows[5].values.iter().zip([0.967, 0.887, 0.820, 0.945]) {
            assert!((got.unwrap() - want).abs() < 5e-4);
        }
    }

    #[test]
    fn empty_report_rejected() {
        let mut r = densenet();
        r.matrix = ConfusionMatrix::default();
        assert!(matches!(compare(&r, "x"), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn emitted_table_round_trips_constants() {
        let dir = tempfile::tempdir().unwrap();
        let rows = compare(&densenet(), "pipeline").unwrap();
        write_comparison(&rows, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("comparison.tsv")).unwrap();
        let back = parse_comparison_tsv(&text).unwrap();
        assert_eq!(back, rows);
        for (b, r) in BASELINES.iter().zip(&back) {
            assert_eq!(ComparisonRow::from(b), *r);
        }
        assert!(dir.path().join("comparison/stressed.png").is_file());
        assert!(dir.path().join("comparison/healthy.png").is_file());
    }
}
