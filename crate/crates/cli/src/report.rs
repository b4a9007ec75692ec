//! Summaries, sweep tables, charts and error CDFs built from `runs.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use csiloc::locnet::format_error_m;
use plotters::prelude::*;
use serde::Serialize;

use crate::error::{CliError, IoContext, Result};
use crate::pipeline::{read_errors, write_json};
use crate::runlog::{self, LogWarning, RunRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub runs: usize,
    /// Mean test error over the scenario's `train` runs, four decimals.
    pub mean_error_m: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TransferLine {
    k: usize,
    mean_error_m: f64,
    train_seconds: f64,
    epochs: usize,
    trainable_params: usize,
    total_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct AblationLine {
    drop_fraction: f64,
    retained_samples: usize,
    mean_error_m: f64,
    epochs: usize,
    train_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ReportIndex<'a> {
    records: usize,
    warning_count: usize,
    warnings: &'a [String],
    files: Vec<String>,
}

/// Table-1-style rows: one per scenario, averaging its `train` runs.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.command == "train") {
        by.entry(&r.scenario).or_default().push(r.mean_error_m);
    }
    by.into_iter()
        .map(|(scenario, e)| SummaryRow {
            scenario: scenario.to_string(),
            runs: e.len(),
            mean_error_m: format_error_m(e.iter().sum::<f64>() / e.len() as f64),
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let wrap = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush().at(path)
}

/// Renders a single-series line chart as SVG.
fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> Result<()> {
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo {
            0.05 * (hi - lo)
        } else {
            lo.abs().max(1.0) * 0.1
        };
        (lo - pad)..(hi + pad)
    };
    let xs = span(points.iter().map(|p| p.0).collect());
    let ys = span(points.iter().map(|p| p.1).collect());
    let fail = |e: &dyn std::fmt::Display| CliError::Chart {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| fail(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(xs, ys)
        .map_err(|e| fail(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| fail(&e))?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(|e| fail(&e))?;
    chart
        .draw_series(points.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
        .map_err(|e| fail(&e))?;
    root.present().map_err(|e| fail(&e))?;
    Ok(())
}

/// Last record per key, in key order.
fn latest<'a, K: Ord>(
    records: impl Iterator<Item = &'a RunRecord>,
    key: impl Fn(&RunRecord) -> K,
) -> Vec<&'a RunRecord> {
    let mut m = BTreeMap::new();
    for r in records {
        m.insert(key(r), r);
    }
    m.into_values().collect()
}

/// Builds every report artifact for the records in `runs` under `out`.
pub fn emit_report(runs: &Path, out: &Path) -> Result<Report> {
    let (records, log_warnings) = runlog::read(runs)?;
    let mut warnings: Vec<String> = log_warnings
        .iter()
        .map(|w: &LogWarning| format!("{}: {w}", runs.display()))
        .collect();
    if records.is_empty() {
        warnings.push(format!("{}: empty report, no run records", runs.display()));
    }
    fs::create_dir_all(out).at(out)?;
    let mut files = Vec::new();

    let summary = summarize(&records);
    let path = out.join("summary.csv");
    write_csv(&path, &summary, &["scenario", "runs", "mean_error_m"])?;
    files.push(path);
    let mut md = String::from("| Scenario | Runs | Mean error (m) |\n|---|---|---|\n");
    for r in &summary {
        md.push_str(&format!("| {} | {} | {} |\n", r.scenario, r.runs, r.mean_error_m));
    }
    let path = out.join("summary.md");
    fs::write(&path, md).at(&path)?;
    files.push(path);

    let scenarios: Vec<&str> = {
        let mut s: Vec<&str> = records.iter().map(|r| r.scenario.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    for scenario in scenarios {
        let of = |cmd: &'static str| {
            records
                .iter()
                .filter(move |r| r.scenario == scenario && r.command == cmd)
        };

        let transfer = latest(of("transfer-sweep"), |r| r.frozen_layers);
        if !transfer.is_empty() {
            let lines: Vec<TransferLine> = transfer
                .iter()
                .map(|r| TransferLine {
                    k: r.frozen_layers,
                    mean_error_m: r.mean_error_m,
                    train_seconds: r.train_seconds,
                    epochs: r.epochs,
                    trainable_params: r.trainable_params,
                    total_params: r.total_params,
                })
                .collect();
            let stem = format!("transfer_{scenario}");
            let path = out.join(format!("{stem}.csv"));
            write_csv(
                &path,
                &lines,
                &[
                    "k",
                    "mean_error_m",
                    "train_seconds",
                    "epochs",
                    "trainable_params",
                    "total_params",
                ],
            )?;
            files.push(path);
            let err: Vec<(f64, f64)> = lines.iter().map(|l| (l.k as f64, l.mean_error_m)).collect();
            let time: Vec<(f64, f64)> = lines.iter().map(|l| (l.k as f64, l.train_seconds)).collect();
            let path = out.join(format!("{stem}_error.svg"));
            line_chart(
                &path,
                &format!("{scenario}: error vs frozen layers"),
                "frozen layers k",
                "mean error (m)",
                &err,
            )?;
            files.push(path);
            let path = out.join(format!("{stem}_time.svg"));
            line_chart(
                &path,
                &format!("{scenario}: training time vs frozen layers"),
                "frozen layers k",
                "training time (s)",
                &time,
            )?;
            files.push(path);
        }

        let ablation = latest(of("ablate"), |r| r.drop_fraction.map(f64::to_bits));
        if !ablation.is_empty() {
            let mut lines: Vec<AblationLine> = ablation
                .iter()
                .map(|r| AblationLine {
                    drop_fraction: r.drop_fraction.unwrap_or(0.0),
                    retained_samples: r.train_samples,
                    mean_error_m: r.mean_error_m,
                    epochs: r.epochs,
                    train_seconds: r.train_seconds,
                })
                .collect();
            lines.sort_by(|a, b| a.drop_fraction.total_cmp(&b.drop_fraction));
            let stem = format!("ablation_{scenario}");
            let path = out.join(format!("{stem}.csv"));
            write_csv(
                &path,
                &lines,
                &[
                    "drop_fraction",
                    "retained_samples",
                    "mean_error_m",
                    "epochs",
                    "train_seconds",
                ],
            )?;
            files.push(path);
            let err: Vec<(f64, f64)> = lines.iter().map(|l| (l.drop_fraction, l.mean_error_m)).collect();
            let path = out.join(format!("{stem}_error.svg"));
            line_chart(
                &path,
                &format!("{scenario}: error vs dropped data"),
                "drop fraction",
                "mean error (m)",
                &err,
            )?;
            files.push(path);
        }
    }

    let cdf_dir = out.join("cdf");
    for r in &records {
        let Some(errors_file) = &r.errors_file else { continue };
        let mut errors = match read_errors(errors_file) {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("run {}: {e}", r.run_id));
                continue;
            }
        };
        fs::create_dir_all(&cdf_dir).at(&cdf_dir)?;
        errors.sort_by(f64::total_cmp);
        let n = errors.len() as f64;
        let mut text = String::from("error_m,fraction\n");
        for (i, e) in errors.iter().enumerate() {
            text.push_str(&format!("{e},{}\n", (i + 1) as f64 / n));
        }
        let path = cdf_dir.join(format!("{}.csv", r.run_id));
        fs::write(&path, text).at(&path)?;
        files.push(path);
    }

    let index = ReportIndex {
        records: records.len(),
        warning_count: warnings.len(),
        warnings: &warnings,
        files: files.iter().map(|f| f.display().to_string()).collect(),
    };
    let path = out.join("report.json");
    write_json(&path, &index)?;
    files.push(path);
    Ok(Report {
        summary,
        warnings,
        files,
    })
}
