//! CSV and JSON reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use decoy_core::analysis::AnomalyVerdict;
use decoy_core::simulation::ObservedStatistics;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentSpec, ReportFormat};
use crate::experiment::Row;

pub const CSV_HEADER: &str = "distance_km,eta,Q_mu,E_mu,Q_nu,E_nu,Y0_hat,Y0_lo,Y0_hi,Y1_lower,Q1_lower,e1_upper,R_decoy,R_baseline,verdict,clamps";

/// Verdict column of a point whose analysis failed.
pub const ERROR_VERDICT: &str = "error";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,

    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Nine significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// The numeric columns of one row, `None` where the value does not exist.
#[derive(Debug, Clone, Serialize)]
pub struct RowValues {
    #[serde(rename = "Q_mu")]
    pub q_mu: Option<f64>,
    #[serde(rename = "E_mu")]
    pub e_mu: Option<f64>,
    #[serde(rename = "Q_nu")]
    pub q_nu: Option<f64>,
    #[serde(rename = "E_nu")]
    pub e_nu: Option<f64>,
    #[serde(rename = "Y0_hat")]
    pub y0_hat: Option<f64>,
    #[serde(rename = "Y0_lo")]
    pub y0_lo: Option<f64>,
    #[serde(rename = "Y0_hi")]
    pub y0_hi: Option<f64>,
    #[serde(rename = "Y1_lower")]
    pub y1_lower: Option<f64>,
    #[serde(rename = "Q1_lower")]
    pub q1_lower: Option<f64>,
    pub e1_upper: Option<f64>,
    #[serde(rename = "R_decoy")]
    pub r_decoy: Option<f64>,
    #[serde(rename = "R_baseline")]
    pub r_baseline: Option<f64>,
}

impl RowValues {
    fn of(row: &Row) -> Self {
        let Ok(point) = &row.outcome else {
            return RowValues {
                q_mu: None,
                e_mu: None,
                q_nu: None,
                e_nu: None,
                y0_hat: None,
                y0_lo: None,
                y0_hi: None,
                y1_lower: None,
                q1_lower: None,
                e1_upper: None,
                r_decoy: None,
                r_baseline: None,
            };
        };
        let a = &point.analysis;
        RowValues {
            q_mu: Some(a.signal.gain),
            e_mu: Some(a.signal.qber),
            q_nu: a.weak.map(|w| w.gain),
            e_nu: a.weak.map(|w| w.qber),
            y0_hat: Some(a.estimate.y0.point),
            y0_lo: Some(a.estimate.y0.lo),
            y0_hi: Some(a.estimate.y0.hi),
            y1_lower: Some(a.estimate.y1_lower),
            q1_lower: Some(a.estimate.q1_lower),
            e1_upper: Some(a.estimate.e1_upper),
            r_decoy: Some(a.report.r_decoy),
            r_baseline: Some(a.report.r_baseline),
        }
    }

    fn columns(&self) -> [Option<f64>; 12] {
        [
            self.q_mu,
            self.e_mu,
            self.q_nu,
            self.e_nu,
            self.y0_hat,
            self.y0_lo,
            self.y0_hi,
            self.y1_lower,
            self.q1_lower,
            self.e1_upper,
            self.r_decoy,
            self.r_baseline,
        ]
    }
}

fn verdict(row: &Row) -> &'static str {
    match &row.outcome {
        Ok(p) => p.analysis.report.anomaly.verdict.as_str(),
        Err(_) => ERROR_VERDICT,
    }
}

fn clamps(row: &Row) -> &[String] {
    match &row.outcome {
        Ok(p) => &p.analysis.report.clamps,
        Err(_) => &[],
    }
}

/// The CSV report: header plus one line per row, `\n` line endings.
pub fn csv_string(rows: &[Row]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format_float(row.distance_km));
        out.push(',');
        out.push_str(&format_float(row.eta));
        for value in RowValues::of(row).columns() {
            out.push(',');
            if let Some(x) = value {
                out.push_str(&format_float(x));
            }
        }
        let _ = writeln!(out, ",{},{}", verdict(row), clamps(row).join(";"));
    }
    out
}

#[derive(Serialize)]
struct JsonRow<'a> {
    index: usize,
    distance_km: f64,
    eta: f64,
    seed: u64,
    #[serde(flatten)]
    values: RowValues,
    verdict: &'static str,
    clamps: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    anomaly: Option<&'a AnomalyVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    statistics: Option<&'a ObservedStatistics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    spec: &'a ExperimentSpec,
    rows: Vec<JsonRow<'a>>,
}

/// The JSON report: the resolved spec and the CSV fields of every row, plus
/// per-class anomaly checks and raw tallies.
pub fn json_string(rows: &[Row], spec: &ExperimentSpec) -> String {
    let rows = rows
        .iter()
        .map(|row| {
            let point = row.outcome.as_ref().ok();
            JsonRow {
                index: row.index,
                distance_km: row.distance_km,
                eta: row.eta,
                seed: row.seed,
                values: RowValues::of(row),
                verdict: verdict(row),
                clamps: clamps(row),
                anomaly: point.map(|p| &p.analysis.report.anomaly),
                statistics: point.and_then(|p| p.statistics.as_ref()),
                error: row.outcome.as_ref().err().map(String::as_str),
            }
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&JsonReport { spec, rows }).expect("report serializes");
    text.push('\n');
    text
}

/// Writes `<stem>.<format>` into `dir` for every requested format and returns
/// the written paths.
pub fn emit_report(
    rows: &[Row],
    spec: &ExperimentSpec,
    dir: &Path,
    stem: &str,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut written = Vec::new();
    for format in formats {
        let text = match format {
            ReportFormat::Csv => csv_string(rows),
            ReportFormat::Json => json_string(rows, spec),
        };
        let path = dir.join(format!("{stem}.{format}"));
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| ReportError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}
