//! Report files. Every writer is a pure function of its inputs so reruns
//! are byte-identical.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use biopay_core::metrics::{ClassMetrics, ConfusionMatrix, MetricTable, RocCurve};

const METRIC_HEADER: [&str; 7] = ["Class", "Accuracy", "Precision", "Sensitivity", "Specificity", "F1", "Support"];

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn metric_cells(name: &str, m: &ClassMetrics) -> Vec<String> {
    let mut row = vec![name.to_string()];
    row.extend(m.values().iter().map(|v| format!("{v:.4}")));
    row.push(m.support.to_string());
    row
}

/// One row per tabulated class in `classes` order, then the class average.
pub fn metric_table_csv(table: &MetricTable, classes: &[String]) -> String {
    let mut w = csv_writer();
    w.write_record(METRIC_HEADER).expect("in-memory csv");
    for c in classes {
        let Some(m) = table.rows.get(c) else { continue };
        w.write_record(metric_cells(c, m)).expect("in-memory csv");
    }
    w.write_record(metric_cells("Average", &table.overall())).expect("in-memory csv");
    finish(w)
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_csv(cm: &ConfusionMatrix, classes: &[String]) -> String {
    let mut w = csv_writer();
    let mut header = vec!["truth \\ predicted".to_string()];
    header.extend(classes.iter().cloned());
    w.write_record(&header).expect("in-memory csv");
    for (c, row) in classes.iter().zip(cm.rows()) {
        let mut rec = vec![c.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).expect("in-memory csv");
    }
    finish(w)
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut w = csv_writer();
    w.write_record(["fpr", "tpr", "threshold"]).expect("in-memory csv");
    for (i, (fpr, tpr)) in curve.points.iter().enumerate() {
        let thr = if i == 0 { "inf".to_string() } else { format!("{:.6}", curve.thresholds[i - 1]) };
        w.write_record([format!("{fpr:.6}"), format!("{tpr:.6}"), thr]).expect("in-memory csv");
    }
    finish(w)
}

/// File-name-safe form of a class name: `Papio sp` → `papio_sp`.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}
