use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::Experiment;
use super::metrics::read_jsonl;
use crate::diagnostics::ema_smooth;
use crate::error::{Error, Result};

pub const EMA_DECAY: f64 = 0.9;
pub const CSV_HEADER: &str = "step,seed,raw,ema";

/// One CSV row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotRow {
    pub step: u64,
    pub seed: u64,
    pub raw: f64,
    pub ema: f64,
}

/// Metric name → rows ordered by seed, then by record order.
pub type PlotData = BTreeMap<String, Vec<PlotRow>>;

fn metric_files(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(run_dir)
        .map_err(|e| Error::MissingMetrics(format!("{}: {e}", run_dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::MissingMetrics(run_dir.display().to_string()));
    }
    Ok(files)
}

fn experiment_of(path: &Path) -> Option<Experiment> {
    let stem = path.file_stem()?.to_str()?;
    let prefix = stem.split('_').next()?;
    serde_json::from_value(prefix.into()).ok()
}

/// Collects every scalar metric of the run directory with its smoothed curve.
pub fn collect_plotdata(run_dir: &Path) -> Result<PlotData> {
    let mut series: BTreeMap<String, BTreeMap<u64, Vec<(u64, f64)>>> = BTreeMap::new();
    for path in metric_files(run_dir)? {
        if let Some(exp) = experiment_of(&path) {
            for name in exp.metric_names() {
                series.entry(name).or_default();
            }
        }
        for record in read_jsonl(&path)? {
            for (name, raw) in record.metrics() {
                series
                    .entry(name)
                    .or_default()
                    .entry(record.seed())
                    .or_default()
                    .push((record.step(), raw));
            }
        }
    }
    let mut out = PlotData::new();
    for (name, by_seed) in series {
        let mut rows = Vec::new();
        for (seed, points) in by_seed {
            let raws: Vec<f64> = points.iter().map(|p| p.1).collect();
            let emas = ema_smooth(&raws, EMA_DECAY)?;
            rows.extend(points.iter().zip(emas).map(|(&(step, raw), ema)| PlotRow { step, seed, raw, ema }));
        }
        out.insert(name, rows);
    }
    Ok(out)
}

/// Writes `<metric>.csv` for every metric of `run_dir` into `out_dir`.
pub fn export_plotdata(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = collect_plotdata(run_dir)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(data.len());
    for (name, rows) in &data {
        let path = out_dir.join(format!("{name}.csv"));
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for r in rows {
            text.push_str(&format!("{},{},{:?},{:?}\n", r.step, r.seed, r.raw, r.ema));
        }
        fs::File::create(&path)?.write_all(text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Parses a CSV written by [`export_plotdata`].
pub fn read_plot_csv(path: &Path) -> Result<Vec<PlotRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let corrupt = |line: usize, reason: &str| Error::CorruptRecord {
        location: format!("{}:{line}", path.display()),
        reason: reason.to_string(),
    };
    if lines.next() != Some(CSV_HEADER) {
        return Err(corrupt(1, "bad header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(corrupt(i + 2, "expected four columns"));
            }
            let bad = |_| corrupt(i + 2, "unparsable number");
            Ok(PlotRow {
                step: cols[0].parse().map_err(|_| corrupt(i + 2, "bad step"))?,
                seed: cols[1].parse().map_err(|_| corrupt(i + 2, "bad seed"))?,
                raw: cols[2].parse().map_err(bad)?,
                ema: cols[3].parse().map_err(bad)?,
            })
        })
        .collect()
}
