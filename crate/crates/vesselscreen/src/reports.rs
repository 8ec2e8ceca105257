//! CSV outputs. Every file has a header row and a fixed column order.
//! Report metrics use three decimals; an undefined metric is an empty field.

use std::path::Path;

use vesselscreen_core::evalkit::{ConfusionCounts, MetricsRow, RocCurve};
use vesselscreen_core::trainer::{FoldResult, Partition, TrainLog, VesselPrediction};
use vesselscreen_core::VesselLabel;

use crate::error::{Error, Result};
use crate::fsutil;

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    fsutil::write_atomic(path, &bytes)
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{:.3}", x)).unwrap_or_default()
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["epoch", "train_loss", "train_acc", "val_loss", "val_acc"].map(String::from))?;
    for e in &log.epochs {
        row(&[
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.train_acc.to_string(),
            e.val_loss.to_string(),
            e.val_acc.to_string(),
        ])?;
    }
    finish(path, w)
}

pub fn write_predictions(path: &Path, preds: &[VesselPrediction]) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["vessel_id", "subject_id", "true_label", "p_abnormal"].map(String::from))?;
    for p in preds {
        row(&[p.vessel_id.clone(), p.subject_id.clone(), p.label.as_str().into(), p.p_abnormal.to_string()])?;
    }
    finish(path, w)
}

pub fn read_predictions(path: &Path) -> Result<Vec<VesselPrediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::input(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| Error::input(path, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["vessel_id", "subject_id", "true_label", "p_abnormal"] {
        return Err(Error::input(path, "expected columns vessel_id,subject_id,true_label,p_abnormal"));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::input(path, format!("line {}: {}", line, e)))?;
        let label = VesselLabel::parse(&rec[2])
            .ok_or_else(|| Error::input(path, format!("line {}: bad label {:?}", line, &rec[2])))?;
        let p: f64 = rec[3]
            .parse()
            .map_err(|_| Error::input(path, format!("line {}: bad probability {:?}", line, &rec[3])))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::input(path, format!("line {}: probability {} outside [0, 1]", line, p)));
        }
        out.push(VesselPrediction { vessel_id: rec[0].into(), subject_id: rec[1].into(), label, p_abnormal: p });
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["threshold", "tp", "fp", "fn", "tn", "accuracy", "ppv", "sensitivity", "specificity", "npv"].map(String::from))?;
    for m in rows {
        let c = m.counts;
        row(&[
            format!("{:.1}", m.threshold),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            fmt3(m.accuracy),
            fmt3(m.ppv),
            fmt3(m.sensitivity),
            fmt3(m.specificity),
            fmt3(m.npv),
        ])?;
    }
    finish(path, w)
}

/// Curve points with the curve's AUC repeated on every row.
pub fn write_roc(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["fpr", "tpr", "threshold", "auc"].map(String::from))?;
    for p in &roc.points {
        row(&[p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string(), roc.auc.to_string()])?;
    }
    finish(path, w)
}

/// `(name, auc)` rows, e.g. per fold followed by pooled, mean and sd.
pub fn write_auc(path: &Path, rows: &[(String, Option<f64>)]) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["fold", "auc"].map(String::from))?;
    for (name, v) in rows {
        row(&[name.clone(), v.map(|x| format!("{:.4}", x)).unwrap_or_default()])?;
    }
    finish(path, w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationRow {
    pub vessel_id: String,
    pub level: &'static str,
    pub counts: ConfusionCounts,
    /// False for region rows, where true negatives are undefined.
    pub tn_defined: bool,
    pub dice: Option<f64>,
    pub sensitivity: Option<f64>,
}

pub fn write_localization(path: &Path, rows: &[LocalizationRow]) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["vessel_id", "level", "tp", "fp", "fn", "tn", "dice", "sensitivity"].map(String::from))?;
    for l in rows {
        let c = l.counts;
        row(&[
            l.vessel_id.clone(),
            l.level.into(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            if l.tn_defined { c.tn.to_string() } else { String::new() },
            fmt3(l.dice),
            fmt3(l.sensitivity),
        ])?;
    }
    finish(path, w)
}

/// One row per fold: epochs run, stop reason, best epoch, partition sizes
/// and test AUC.
pub fn write_fold_summary(path: &Path, folds: &[&FoldResult]) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["fold", "epochs", "stop_reason", "best_epoch", "train_subjects", "val_subjects", "test_subjects", "test_auc"].map(String::from))?;
    for f in folds {
        let log = &f.outcome.log;
        row(&[
            f.split.fold_index.to_string(),
            log.epochs.len().to_string(),
            log.stop_reason.map(|r| r.as_str()).unwrap_or("").into(),
            log.best_epoch.to_string(),
            f.split.train_subjects.len().to_string(),
            f.split.val_subjects.len().to_string(),
            f.split.test_subjects.len().to_string(),
            f.auc.map(|a| format!("{:.4}", a)).unwrap_or_default(),
        ])?;
    }
    finish(path, w)
}

/// Subject assignment of every fold: `fold, subject_id, partition`.
pub fn write_splits(path: &Path, folds: &[&FoldResult]) -> Result<()> {
    let mut w = writer();
    let mut row = |r: &[String]| w.write_record(r).map_err(|e| csv_err(path, e));
    row(&["fold", "subject_id", "partition"].map(String::from))?;
    for f in folds {
        for (part, ids) in [
            (Partition::Train, &f.split.train_subjects),
            (Partition::Val, &f.split.val_subjects),
            (Partition::Test, &f.split.test_subjects),
        ] {
            let name = match part {
                Partition::Train => "train",
                Partition::Val => "val",
                Partition::Test => "test",
            };
            for id in ids {
                row(&[f.split.fold_index.to_string(), id.clone(), name.into()])?;
            }
        }
    }
    finish(path, w)
}
