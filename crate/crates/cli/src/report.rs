//! Fidelity/transferability summary over a directory of runs.
//!
//! Scans each run subdirectory for a `metrics.csv`, pairs clean and
//! watermarked rows by (dataset, pretext, task), and emits a side-by-side
//! table (CSV plus aligned text) with per-cell mean ± sample standard
//! deviation across seeds.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use graphmark_core::error::{Error, Result};

use crate::commands::METRICS_FILE;

#[derive(Debug, Clone)]
struct MetricsRow {
    task: String,
    dataset: String,
    pretext: String,
    watermarked: bool,
    metric_name: String,
    metric_value: Option<f64>,
    cs: f64,
}

fn parse_metrics_file(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue; // header
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 10 columns, got {}", f.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad {what} field"),
        };
        rows.push(MetricsRow {
            task: f[0].to_string(),
            dataset: f[1].to_string(),
            pretext: f[2].to_string(),
            watermarked: f[3].parse().map_err(|_| bad("watermarked"))?,
            metric_name: f[4].to_string(),
            metric_value: if f[5].is_empty() {
                None
            } else {
                Some(f[5].parse().map_err(|_| bad("metric_value"))?)
            },
            cs: f[6].parse().map_err(|_| bad("cs"))?,
        });
    }
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn cell(values: &[f64]) -> String {
    if values.is_empty() {
        return "-".to_string();
    }
    let (mean, std) = mean_std(values);
    // Table-style percent formatting
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

/// Aggregate all runs under `dir`. Groups missing one side are listed as
/// incomplete; the command still succeeds.
pub fn cmd_report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        let metrics = if path.is_dir() {
            path.join(METRICS_FILE)
        } else {
            continue;
        };
        if metrics.exists() {
            rows.extend(parse_metrics_file(&metrics)?);
        }
    }
    // also accept a metrics.csv directly in the scanned directory
    let direct = dir.join(METRICS_FILE);
    if direct.exists() {
        rows.extend(parse_metrics_file(&direct)?);
    }
    if rows.is_empty() {
        eprintln!("warning: no metrics found under {}", dir.display());
    }

    #[derive(Default)]
    struct Cell {
        metric_name: String,
        clean_metric: Vec<f64>,
        wm_metric: Vec<f64>,
        clean_cs: Vec<f64>,
        wm_cs: Vec<f64>,
    }
    let mut groups: BTreeMap<(String, String, String), Cell> = BTreeMap::new();
    for r in &rows {
        let cell = groups
            .entry((r.dataset.clone(), r.pretext.clone(), r.task.clone()))
            .or_default();
        cell.metric_name = r.metric_name.clone();
        if r.watermarked {
            if let Some(m) = r.metric_value {
                cell.wm_metric.push(m);
            }
            cell.wm_cs.push(r.cs);
        } else {
            if let Some(m) = r.metric_value {
                cell.clean_metric.push(m);
            }
            cell.clean_cs.push(r.cs);
        }
    }

    let csv_path = dir.join("report.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        csv,
        "dataset,pretext,task,metric_name,n_clean,n_wm,\
         metric_clean_mean,metric_clean_std,metric_wm_mean,metric_wm_std,\
         cs_clean_mean,cs_clean_std,cs_wm_mean,cs_wm_std,complete"
    )?;

    let header = format!(
        "{:<10} {:<12} {:<10} {:<7} {:>17} {:>17} {:>17} {:>17}",
        "dataset", "pretext", "task", "metric", "metric clean", "metric wm", "CS clean", "CS wm"
    );
    println!("{header}");
    println!("{}", "-".repeat(header.len()));
    let mut incomplete = Vec::new();
    for ((dataset, pretext, task), agg) in &groups {
        let complete = !agg.clean_cs.is_empty() && !agg.wm_cs.is_empty();
        if !complete {
            incomplete.push(format!("{dataset}/{pretext}/{task}"));
        }
        let opt = |v: &[f64], idx: usize| -> String {
            if v.is_empty() {
                String::new()
            } else {
                let r = mean_std(v);
                format!("{}", if idx == 0 { r.0 } else { r.1 })
            }
        };
        writeln!(
            csv,
            "{dataset},{pretext},{task},{},{},{},{},{},{},{},{},{},{},{},{complete}",
            agg.metric_name,
            agg.clean_cs.len(),
            agg.wm_cs.len(),
            opt(&agg.clean_metric, 0),
            opt(&agg.clean_metric, 1),
            opt(&agg.wm_metric, 0),
            opt(&agg.wm_metric, 1),
            opt(&agg.clean_cs, 0),
            opt(&agg.clean_cs, 1),
            opt(&agg.wm_cs, 0),
            opt(&agg.wm_cs, 1),
        )?;
        println!(
            "{:<10} {:<12} {:<10} {:<7} {:>17} {:>17} {:>17} {:>17}",
            dataset,
            pretext,
            task,
            agg.metric_name,
            cell(&agg.clean_metric),
            cell(&agg.wm_metric),
            cell(&agg.clean_cs),
            cell(&agg.wm_cs),
        );
    }
    csv.flush()?;
    if !incomplete.is_empty() {
        println!("incomplete pairs (missing clean or watermarked side):");
        for g in &incomplete {
            println!("  {g}");
        }
    }
    println!("summary written to {}", csv_path.display());
    Ok(())
}
