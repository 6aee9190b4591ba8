use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::run::{read_record, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    /// Tidy `x, y, series, seed` rows.
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::Plotdata),
            _ => Err(Error::validation(format!("unknown report format `{s}`"))),
        }
    }
}

/// Every `record.json` below `dir`, ordered by method, axis value and seed.
pub fn collect_records(dir: &Path) -> Result<Vec<RunRecord>> {
    fn walk(dir: &Path, out: &mut Vec<RunRecord>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
            if path.is_dir() && !hidden {
                walk(&path, out)?;
            } else if path.file_name().is_some_and(|n| n == "record.json") {
                out.push(read_record(&path)?);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, &mut out)?;
    sort_records(&mut out);
    Ok(out)
}

pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (&a.method, &a.axis, a.value.unwrap_or(f64::NEG_INFINITY), a.seed, &a.config_hash)
            .partial_cmp(&(&b.method, &b.axis, b.value.unwrap_or(f64::NEG_INFINITY), b.seed, &b.config_hash))
            .expect("finite sweep values")
    });
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub method: String,
    pub axis: Option<String>,
    pub value: Option<f64>,
    pub runs: usize,
    pub id_mean: f64,
    pub id_std: f64,
    pub ood_mean: f64,
    pub ood_std: f64,
}

impl GroupSummary {
    pub fn setting(&self) -> String {
        match (&self.axis, self.value) {
            (Some(a), Some(v)) => format!("{a}={v}"),
            _ => "-".to_string(),
        }
    }
}

/// Groups by `(method, axis, value)` in the order the groups first appear.
pub fn summarize(records: &[RunRecord]) -> Vec<GroupSummary> {
    let mut keys: Vec<(String, Option<String>, Option<f64>)> = Vec::new();
    for r in records {
        let k = (r.method.clone(), r.axis.clone(), r.value);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, axis, value)| {
            let rows: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.method == method && r.axis == axis && r.value == value)
                .collect();
            let (id_mean, id_std) = mean_std(&rows.iter().map(|r| r.id_accuracy).collect::<Vec<_>>());
            let (ood_mean, ood_std) = mean_std(&rows.iter().map(|r| r.ood_accuracy).collect::<Vec<_>>());
            GroupSummary {
                method,
                axis,
                value,
                runs: rows.len(),
                id_mean,
                id_std,
                ood_mean,
                ood_std,
            }
        })
        .collect()
}

/// Accuracy table in percent, mean and sample std over seeds.
pub fn render_markdown(groups: &[GroupSummary]) -> String {
    let mut s = String::from("| Method | Setting | ID acc | ID std | OOD acc | OOD std | Seeds |\n");
    s.push_str("|---|---|---:|---:|---:|---:|---:|\n");
    for g in groups {
        let _ = writeln!(
            s,
            "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {} |",
            g.method,
            g.setting(),
            100.0 * g.id_mean,
            100.0 * g.id_std,
            100.0 * g.ood_mean,
            100.0 * g.ood_std,
            g.runs
        );
    }
    s
}

pub fn write_records_csv<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Serialize)]
struct PlotRow {
    x: f64,
    y: f64,
    series: String,
    seed: u64,
}

/// One row per record and metric. `x` is the sweep value, or 0 outside a
/// sweep; series names look like `rex/ood`.
pub fn render_plotdata(records: &[RunRecord]) -> Result<String> {
    let mut out = csv::Writer::from_writer(Vec::new());
    for r in records {
        for (metric, y) in [("id", r.id_accuracy), ("ood", r.ood_accuracy)] {
            out.serialize(PlotRow {
                x: r.value.unwrap_or(0.0),
                y,
                series: format!("{}/{metric}", r.method),
                seed: r.seed,
            })?;
        }
    }
    let bytes = out.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render(records: &[RunRecord], format: ReportFormat) -> Result<String> {
    if records.is_empty() {
        return Err(Error::validation("no run records to report"));
    }
    match format {
        ReportFormat::Markdown => Ok(render_markdown(&summarize(records))),
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            write_records_csv(&mut buf, records)?;
            Ok(String::from_utf8(buf).expect("csv output is utf-8"))
        }
        ReportFormat::Plotdata => render_plotdata(records),
    }
}

/// Collects the records under `dir` and renders them.
pub fn report(dir: &Path, format: ReportFormat) -> Result<String> {
    render(&collect_records(dir)?, format)
}
