//! Per-epoch history as a tab-separated table, and learning-curve plots.

use std::fs;
use std::path::Path;

use super::{EpochRecord, TrainingHistory};
use crate::error::{Error, Result};
use crate::plot;

const HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc";

impl TrainingHistory {
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# best_epoch={}\n{HEADER}\n", self.best_epoch);
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<TrainingHistory> {
        let bad = |m: String| Error::InvalidArgument(format!("history table: {m}"));
        let mut history = TrainingHistory::default();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# best_epoch=") {
                history.best_epoch = rest.trim().parse().map_err(|_| bad("bad best_epoch".into()))?;
                continue;
            }
            if line.starts_with('#') || line == HEADER || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields in '{line}'")));
            }
            let real = |i: usize| -> Result<f64> { f[i].parse().map_err(|_| bad(format!("bad number '{}'", f[i]))) };
            history.records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(format!("bad epoch '{}'", f[0])))?,
                lr: real(1)?,
                train_loss: real(2)?,
                train_acc: real(3)?,
                val_loss: real(4)?,
                val_acc: real(5)?,
            });
        }
        Ok(history)
    }

    /// Minimum validation loss over the recorded epochs.
    pub fn min_val_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_loss).reduce(f64::min)
    }
}

pub fn write_history(history: &TrainingHistory, path: &Path) -> Result<()> {
    fs::write(path, history.to_tsv()).map_err(|e| Error::write(path, e))
}

pub fn read_history(path: &Path) -> Result<TrainingHistory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainingHistory::from_tsv(&text)
}

/// Write `loss.png` (train then val), `accuracy.png` (train then val) and
/// `history.tsv` into `out_dir`.
pub fn learning_curves(history: &TrainingHistory, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::write(out_dir, e))?;
    let series = |f: fn(&EpochRecord) -> f64| -> Vec<(f64, f64)> {
        history.records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    plot::line_chart(
        &out_dir.join("loss.png"),
        &[series(|r| r.train_loss), series(|r| r.val_loss)],
    )?;
    plot::line_chart(
        &out_dir.join("accuracy.png"),
        &[series(|r| r.train_acc), series(|r| r.val_acc)],
    )?;
    write_history(history, &out_dir.join("history.tsv"))
}
