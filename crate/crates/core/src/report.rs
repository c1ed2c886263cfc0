//! Report files written after a run.
//!
//! Per arm (`local`, `global`, `consensus`):
//!
//! * `{arm}_detail.csv`: `missing_rate,feature,accuracy_pct,ks_complement,smape,mse`
//! * `{arm}_summary.csv`: `missing_rate,metric,mean,median,std`
//! * `{arm}_report.txt`: the same numbers as a fixed-width table
//!
//! Plus `audit.json`, `unrecoverable.csv`, and one `recovered_r{pct}.csv`
//! per missing rate. `missing_rate` is written in percent.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::{Arm, AuditEntry, MetricReport, RunArtifacts, RunError, RunSettings, UnrecoverableCell};
use crate::metrics::{Metric, MetricRow};

pub const DETAIL_HEADER: [&str; 6] = ["missing_rate", "feature", "accuracy_pct", "ks_complement", "smape", "mse"];
pub const SUMMARY_HEADER: [&str; 5] = ["missing_rate", "metric", "mean", "median", "std"];
pub const AUDIT_FORMAT_VERSION: u32 = 1;

/// Missing rate in percent, rounded to six decimals so `0.3` prints as `30`.
pub fn rate_pct(rate: f64) -> String {
    let pct = (rate * 100.0 * 1e6).round() / 1e6;
    format!("{pct}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRate {
    pub rate: f64,
    /// Fingerprint of the masked table that stage I and retrieval saw.
    pub masked_fingerprint: String,
    pub clusters: usize,
    pub noise_rows: usize,
    pub les: Vec<usize>,
    pub ges: Vec<usize>,
    pub entries: Vec<AuditEntry>,
    pub unrecoverable: Vec<UnrecoverableCell>,
}

/// Machine-readable record of a run: every injected cell, what was
/// retrieved, what each recommender answered, and how consensus decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub format_version: u32,
    pub source_fingerprint: String,
    pub settings: RunSettings,
    pub rates: Vec<AuditRate>,
}

impl AuditLog {
    pub fn from_artifacts(art: &RunArtifacts) -> Self {
        AuditLog {
            format_version: AUDIT_FORMAT_VERSION,
            source_fingerprint: art.source_fingerprint.clone(),
            settings: art.settings.clone(),
            rates: art
                .runs
                .iter()
                .map(|r| AuditRate {
                    rate: r.rate,
                    masked_fingerprint: r.masked.fingerprint(),
                    clusters: r.clusters,
                    noise_rows: r.noise_rows,
                    les: r.samples.les.clone(),
                    ges: r.samples.ges.clone(),
                    entries: r.audit.clone(),
                    unrecoverable: r.unrecoverable.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit log is always serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
        serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> RunError {
    io_err(path, std::io::Error::other(e))
}

pub fn detail_csv(report: &MetricReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DETAIL_HEADER).expect("in-memory write");
    for block in &report.blocks {
        for row in &block.rows {
            w.write_record([
                rate_pct(block.rate),
                row.feature.clone(),
                row.accuracy_pct.to_string(),
                row.ks_complement.to_string(),
                row.smape.to_string(),
                row.mse.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Metric rows without a missing-rate column, for standalone scoring.
pub fn rows_csv(rows: &[MetricRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "n", "accuracy_pct", "ks_complement", "smape", "mse"]).expect("in-memory write");
    for row in rows {
        w.write_record([
            row.feature.clone(),
            row.n.to_string(),
            row.accuracy_pct.to_string(),
            row.ks_complement.to_string(),
            row.smape.to_string(),
            row.mse.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn summary_csv(report: &MetricReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for block in &report.blocks {
        for metric in Metric::ALL {
            if let Some(s) = block.summary.get(&metric) {
                w.write_record([
                    rate_pct(block.rate),
                    metric.name().to_string(),
                    s.mean.to_string(),
                    s.median.to_string(),
                    s.std.to_string(),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Fixed-width rendering of one arm's metrics, one line per
/// `(missing rate, feature)` followed by per-rate mean/median/std.
pub fn text_report(report: &MetricReport) -> String {
    let headers = ["Missing Rate (%)", "Feature", "Accuracy (%)", "KS-Comp", "SMAPE", "MSE"];
    let mut lines: Vec<[String; 6]> = Vec::new();
    for block in &report.blocks {
        for row in &block.rows {
            lines.push([
                rate_pct(block.rate),
                row.feature.clone(),
                format!("{:.2}", row.accuracy_pct),
                format!("{:.4}", row.ks_complement),
                format!("{:.4}", row.smape),
                format!("{:.4}", row.mse),
            ]);
        }
        for label in ["mean", "median", "std"] {
            let pick = |m: Metric, digits: usize| {
                block
                    .summary
                    .get(&m)
                    .map(|s| {
                        let v = match label {
                            "mean" => s.mean,
                            "median" => s.median,
                            _ => s.std,
                        };
                        format!("{v:.digits$}")
                    })
                    .unwrap_or_else(|| "-".into())
            };
            lines.push([
                rate_pct(block.rate),
                format!("({label})"),
                pick(Metric::AccuracyPct, 2),
                pick(Metric::KsComplement, 4),
                pick(Metric::Smape, 4),
                pick(Metric::Mse, 4),
            ]);
        }
    }
    let mut widths = headers.map(str::len);
    for line in &lines {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "arm: {}", report.arm.name());
    let render = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 1 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    render(&mut out, &headers.map(String::from));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for line in &lines {
        render(&mut out, line);
    }
    out
}

fn unrecoverable_csv(art: &RunArtifacts) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["missing_rate", "row", "feature", "transport", "reason"]).expect("in-memory write");
    for run in &art.runs {
        for u in &run.unrecoverable {
            w.write_record([rate_pct(run.rate), u.row.to_string(), u.feature.clone(), u.transport.to_string(), u.reason.clone()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Writes every report file into `dir` (created if needed) and returns the
/// paths written, in a fixed order.
pub fn emit_reports(art: &RunArtifacts, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, RunError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), RunError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        written.push(path);
        Ok(())
    };
    for arm in Arm::ALL {
        let report = &art.reports[&arm];
        put(format!("{}_detail.csv", arm.name()), detail_csv(report))?;
        put(format!("{}_summary.csv", arm.name()), summary_csv(report))?;
        put(format!("{}_report.txt", arm.name()), text_report(report))?;
    }
    put("audit.json".into(), AuditLog::from_artifacts(art).to_json())?;
    put("unrecoverable.csv".into(), unrecoverable_csv(art))?;
    for run in &art.runs {
        let path = dir.join(format!("recovered_r{}.csv", rate_pct(run.rate)));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        run.recovered
            .write_csv(BufWriter::new(file), "NULL")
            .map_err(|e| match e {
                crate::table::TableError::Csv(c) => csv_err(&path, c),
                other => RunError::Table(other),
            })?;
        written.push(path);
    }
    Ok(written)
}
