use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BenchmarkReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidParam(format!("unknown report format {other:?}"))),
        }
    }
}

/// Rounds to six significant digits.
pub fn format_sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = format_sig6(n.as_f64().unwrap_or(0.0));
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Removes every `timing` member, leaving the parts that must be identical
/// across runs with the same seed.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        Value::Object(map) => {
            map.remove("timing");
            map.values_mut().for_each(strip_timing);
        }
        _ => {}
    }
}

/// JSON value with sorted keys and floats rounded to six significant digits.
pub fn report_value(report: &BenchmarkReport) -> Result<Value> {
    let mut v = serde_json::to_value(report)
        .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
    round_floats(&mut v);
    Ok(v)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn confusion_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}_confusion.csv"))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format_sig6(x).to_string()).unwrap_or_default()
}

/// Writes the report. CSV output is a per-repeat table at `path` plus the
/// summed confusion matrix at `<stem>_confusion.csv`.
pub fn emit_report(report: &BenchmarkReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let v = report_value(report)?;
            let mut text = serde_json::to_string_pretty(&v)
                .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
            text.push('\n');
            write(path, &text)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Data(format!("cannot write CSV: {e}"));
            w.write_record([
                "repeat",
                "split_seed",
                "accuracy",
                "iterations",
                "converged",
                "test_samples",
                "train_seconds",
                "test_seconds",
                "test_seconds_per_sample",
                "error",
            ])
            .map_err(csv_err)?;
            for r in &report.repeats {
                w.write_record([
                    r.repeat.to_string(),
                    r.split_seed.to_string(),
                    cell(r.accuracy),
                    r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                    r.converged.map(|c| c.to_string()).unwrap_or_default(),
                    r.test_samples.to_string(),
                    cell(Some(r.timing.train_seconds)),
                    cell(Some(r.timing.test_seconds)),
                    cell(Some(r.timing.test_seconds_per_sample)),
                    r.error.clone().unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
            let table = String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?)
                .map_err(|e| Error::Data(e.to_string()))?;

            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec![String::from("true\\predicted")];
            header.extend(report.class_names.iter().cloned());
            w.write_record(&header).map_err(csv_err)?;
            for (name, row) in report.class_names.iter().zip(&report.confusion) {
                let mut rec = vec![name.clone()];
                rec.extend(row.iter().map(|c| c.to_string()));
                w.write_record(&rec).map_err(csv_err)?;
            }
            let confusion = String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?)
                .map_err(|e| Error::Data(e.to_string()))?;

            write(path, &table)?;
            write(&confusion_path(path), &confusion)
        }
    }
}
