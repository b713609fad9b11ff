//! Binary classification metrics with the sarcastic class as positive.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// No positive predictions, so precision was reported as 0.
    pub precision_undefined: bool,
    /// No positive truths, so recall was reported as 0.
    pub recall_undefined: bool,
    /// Precision and recall both zero, so F1 was reported as 0.
    pub f1_undefined: bool,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let (accuracy, _) = ratio(tp + tn, tp + fp + fn_ + tn);
        let f1_undefined = precision + recall == 0.0;
        let f1 = if f1_undefined {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricsReport {
            tp,
            fp,
            fn_,
            tn,
            recall,
            precision,
            accuracy,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn compute_metrics(predictions: &[usize], truths: &[usize]) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            op: "compute_metrics",
            left: vec![predictions.len()],
            right: vec![truths.len()],
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("compute_metrics"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            (p, t) => return Err(Error::InvalidLabel(p.max(t))),
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

/// Class 1 when its probability is strictly larger.
pub fn argmax(probs: &[f64; 2]) -> usize {
    usize::from(probs[1] > probs[0])
}

pub const TABLE_COLUMNS: [&str; 5] = ["Model", "Recall", "Prec.", "Acc.", "F1"];

/// Aligned plain-text table, percentages to two decimals.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, m)| {
            [
                name.clone(),
                format!("{:.2}", 100.0 * m.recall),
                format!("{:.2}", 100.0 * m.precision),
                format!("{:.2}", 100.0 * m.accuracy),
                format!("{:.2}", 100.0 * m.f1),
            ]
        })
        .collect();
    let mut widths = TABLE_COLUMNS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[String]| {
        let padded: Vec<String> = cols
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).expect("writing to a String");
    };
    line(&TABLE_COLUMNS.map(String::from));
    for row in &cells {
        line(row);
    }
    out
}

/// CSV table with full-precision fractions and the confusion counts.
pub fn table_csv(rows: &[(String, MetricsReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model", "recall", "precision", "accuracy", "f1", "tp", "fp", "fn", "tn",
    ])?;
    for (name, m) in rows {
        w.write_record([
            name.clone(),
            m.recall.to_string(),
            m.precision.to_string(),
            m.accuracy.to_string(),
            m.f1.to_string(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            m.tn.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
