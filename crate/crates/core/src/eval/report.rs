//! Human-readable tables, JSON and boxplot data for experiment reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::experiment::{ExperimentReport, ModelResult};
use super::metrics::{aggregate, Aggregate, MetricKind};
use crate::error::{Error, Result};

pub fn model_aggregate(model: &ModelResult, kind: MetricKind) -> Aggregate {
    let values: Vec<Option<f64>> = model.subjects.iter().map(|s| kind.of(&s.metrics)).collect();
    aggregate(&values)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// One block per metric: subjects as rows, models as columns, then the
/// Mean/Median/StD footer.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} (master seed {})", report.experiment, report.master_seed);
    let subjects: Vec<&str> = report
        .models
        .first()
        .map(|m| m.subjects.iter().map(|s| s.subject.as_str()).collect())
        .unwrap_or_default();
    let mut undefined = false;
    for kind in MetricKind::ALL {
        let _ = writeln!(out);
        let _ = write!(out, "{:<10}", kind.name());
        for m in &report.models {
            let _ = write!(out, " {:>8}", m.name);
        }
        let _ = writeln!(out);
        for (si, subject) in subjects.iter().enumerate() {
            let _ = write!(out, "{subject:<10}");
            for m in &report.models {
                let v = m.subjects.get(si).and_then(|s| kind.of(&s.metrics));
                undefined |= v.is_none();
                let _ = write!(out, " {:>8}", cell(v));
            }
            let _ = writeln!(out);
        }
        let aggs: Vec<Aggregate> = report.models.iter().map(|m| model_aggregate(m, kind)).collect();
        for (label, pick) in [
            ("Mean", (|a: &Aggregate| a.mean) as fn(&Aggregate) -> Option<f64>),
            ("Median", |a: &Aggregate| a.median),
            ("StD", |a: &Aggregate| a.std),
        ] {
            let _ = write!(out, "{label:<10}");
            for a in &aggs {
                let _ = write!(out, " {:>8}", cell(pick(a)));
            }
            let _ = writeln!(out);
        }
    }
    if undefined {
        let _ = writeln!(
            out,
            "\nn/a: metric undefined (zero denominator); excluded from Mean/Median/StD."
        );
    }
    out
}

/// Rows of `model,metric,subject,value`; undefined metrics are omitted.
pub fn plot_rows(report: &ExperimentReport) -> Vec<(String, &'static str, String, f64)> {
    let mut rows = Vec::new();
    for m in &report.models {
        for kind in MetricKind::ALL {
            for s in &m.subjects {
                if let Some(v) = kind.of(&s.metrics) {
                    rows.push((m.name.clone(), kind.name(), s.subject.clone(), v));
                }
            }
        }
    }
    rows
}

pub fn emit_plot_data(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "metric", "subject", "value"])?;
    for (model, metric, subject, value) in plot_rows(report) {
        w.write_record([model, metric.to_string(), subject, value.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_report_json(report: &ExperimentReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `<stem>.json`, `<stem>.txt` and `<stem>-plot.csv` under `dir`.
pub fn write_report_files(report: &ExperimentReport, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_report_json(report, &dir.join(format!("{stem}.json")))?;
    let table = dir.join(format!("{stem}.txt"));
    fs::write(&table, render_table(report)).map_err(|e| Error::io(&table, e))?;
    emit_plot_data(report, &dir.join(format!("{stem}-plot.csv")))
}
