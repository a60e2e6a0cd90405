use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use crate::error::{CovrError, Result};
use crate::pipeline::{mean_std, read_jsonl, MetricsRecord, METRICS_FORMAT, METRICS_VERSION};

pub const SUMMARY_FORMAT: &str = "covr-summary";
pub const SUMMARY_VERSION: u32 = 1;

/// Final numbers of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: String,
    pub run: String,
    pub final_er: f64,
    pub final_dd: f64,
    pub series: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub runs: usize,
    pub er_mean: f64,
    pub er_std: f64,
    pub dd_mean: f64,
    pub dd_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryReport {
    pub rows: Vec<SummaryRow>,
    pub incomplete: Vec<PathBuf>,
    pub series_files: Vec<PathBuf>,
}

/// Every directory under `root` (inclusive) that holds a resolved `config.toml`.
pub fn discover_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut walk = WalkDir::new(root).sort_by_file_name().into_iter();
    while let Some(entry) = walk.next() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            CovrError::io(path, e.into())
        })?;
        if entry.file_type().is_dir() && entry.path().join("config.toml").is_file() {
            out.push(entry.into_path());
            walk.skip_current_dir();
        }
    }
    Ok(out)
}

fn label(dir: &Path) -> (String, String) {
    let name = |p: Option<&Path>| {
        p.and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    };
    (name(dir.parent()), name(Some(dir)))
}

/// Reads a run directory; `None` when it has no final metrics record.
pub fn load_run(dir: &Path) -> Result<Option<RunResult>> {
    let path = dir.join("metrics.jsonl");
    if !path.is_file() {
        return Ok(None);
    }
    let series: Vec<MetricsRecord> = read_jsonl(&path, METRICS_FORMAT, METRICS_VERSION)?;
    let Some(last) = series.iter().rev().find(|r| r.is_final) else {
        return Ok(None);
    };
    let (Some(er), Some(dd)) = (last.eval_mean, last.eval_progress) else {
        return Ok(None);
    };
    let (variant, run) = label(dir);
    Ok(Some(RunResult {
        variant,
        run,
        final_er: er,
        final_dd: dd,
        series,
    }))
}

pub fn summarize(results: &[RunResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry(&r.variant).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(variant, rs)| {
            let er: Vec<f64> = rs.iter().map(|r| r.final_er).collect();
            let dd: Vec<f64> = rs.iter().map(|r| r.final_dd).collect();
            let (er_mean, er_std) = mean_std(&er);
            let (dd_mean, dd_std) = mean_std(&dd);
            SummaryRow {
                variant: variant.to_string(),
                runs: rs.len(),
                er_mean,
                er_std,
                dd_mean,
                dd_std,
            }
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> CovrError {
    CovrError::format("csv", format!("{}: {e}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, header: Option<&[&str]>, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CovrError::io(path, e))
}

#[derive(Serialize)]
struct SeriesRow {
    step: usize,
    episode_return: Option<f64>,
    eval_mean: Option<f64>,
    eval_progress: Option<f64>,
}

/// Writes `summary.csv`, `incomplete.csv` and one `series/<variant>_<run>.csv`
/// per finished run into `out`. Output depends only on the run contents.
pub fn emit_summary(run_dirs: &[PathBuf], out: &Path) -> Result<SummaryReport> {
    if run_dirs.is_empty() {
        return Err(CovrError::Usage("no run directories to summarize".into()));
    }
    let mut dirs = run_dirs.to_vec();
    dirs.sort();
    let mut results = Vec::new();
    let mut incomplete = Vec::new();
    for d in &dirs {
        match load_run(d)? {
            Some(r) => results.push(r),
            None => incomplete.push(d.clone()),
        }
    }
    let series_dir = out.join("series");
    fs::create_dir_all(&series_dir).map_err(|e| CovrError::io(&series_dir, e))?;
    let rows = summarize(&results);
    let version = format!("{SUMMARY_FORMAT} v{SUMMARY_VERSION}");
    let summary_path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| csv_err(&summary_path, e))?;
    w.write_record(["# format", version.as_str(), "", "", "", ""])
        .map_err(|e| csv_err(&summary_path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(&summary_path, e))?;
    }
    w.flush().map_err(|e| CovrError::io(&summary_path, e))?;

    let listed: Vec<[String; 1]> = incomplete.iter().map(|p| [p.display().to_string()]).collect();
    write_csv(&out.join("incomplete.csv"), Some(&["run_dir"]), listed)?;

    let mut series_files = Vec::new();
    for r in &results {
        let path = series_dir.join(format!("{}_{}.csv", r.variant, r.run));
        let rows = r.series.iter().map(|m| SeriesRow {
            step: m.step,
            episode_return: m.episode_return,
            eval_mean: m.eval_mean,
            eval_progress: m.eval_progress,
        });
        write_csv(&path, None, rows)?;
        series_files.push(path);
    }
    Ok(SummaryReport {
        rows,
        incomplete,
        series_files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(variant: &str, er: f64) -> RunResult {
        RunResult {
            variant: variant.into(),
            run: "seed0".into(),
            final_er: er,
            final_dd: er / 10.0,
            series: Vec::new(),
        }
    }

    #[test]
    fn mean_and_population_std() {
        let rows = summarize(&[result("covr", 10.0), result("covr", 20.0), result("covr", 30.0)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].er_mean, 20.0);
        assert!((rows[0].er_std - 8.165).abs() < 1e-3);
    }

    #[test]
    fn single_run_has_zero_std() {
        assert_eq!(summarize(&[result("sac", 4.0)])[0].er_std, 0.0);
    }

    #[test]
    fn rows_sorted_by_variant() {
        let rows = summarize(&[result("sac", 1.0), result("covr", 2.0), result("sac", 3.0)]);
        let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["covr", "sac"]);
    }
}
