//! Run reports and their CSV / JSON serialization.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::HarnessError;

pub const CSV_HEADER: &str =
    "seed,sweep_value,time_index,estimate,oracle,error,ar_trials,elementary_ops,fallback_count,wall_ms";

/// One estimate: a seed at a sweep point and a target time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub seed: u64,
    /// `N` for particle sweeps, `T` for horizon sweeps.
    pub sweep_value: u64,
    pub time_index: usize,
    pub estimate: Option<f64>,
    pub oracle: Option<f64>,
    pub error: Option<f64>,
    pub ar_trials: Option<u64>,
    pub elementary_ops: Option<u64>,
    pub fallback_count: Option<u64>,
    pub wall_ms: Option<f64>,
}

/// Across-seed statistics for one `(sweep_value, time_index)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub sweep_value: u64,
    pub time_index: usize,
    pub n_seeds: usize,
    pub mean_estimate: f64,
    pub std_estimate: f64,
    pub mean_error: Option<f64>,
    pub std_err_error: Option<f64>,
    pub rmse: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub mean_elementary_ops: Option<f64>,
    /// Mean accept-reject proposals per path and backward step.
    pub mean_trials_per_draw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedNote {
    pub seed: u64,
    pub sweep_value: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    /// `bench`: slope of `log(mean elementary_ops)` against `log N`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ops_loglog_slope: Option<f64>,
    pub fallback_total: u64,
    /// Largest per-step mean trial count, per sweep point (`bench`).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub max_step_trials_per_draw: Vec<SeedNote>,
    /// `rb_check`: `(ffbsi - ffbsm) / std_err` per seed.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub studentized: Vec<SeedNote>,
    /// `genealogy`: distinct time-0 ancestors per seed.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub distinct_ancestors_at_0: Vec<SeedNote>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub command: String,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub summary: Summary,
}

impl RunReport {
    pub fn csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.sweep_value,
                r.time_index,
                real(r.estimate),
                real(r.oracle),
                real(r.error),
                int(r.ar_trials),
                int(r.elementary_ops),
                int(r.fallback_count),
                real(r.wall_ms),
            );
        }
        out
    }

    pub fn json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn rows_at(&self, sweep_value: u64, time_index: usize) -> impl Iterator<Item = &Row> {
        self.rows
            .iter()
            .filter(move |r| r.sweep_value == sweep_value && r.time_index == time_index)
    }

    pub fn group(&self, sweep_value: u64, time_index: usize) -> Option<&GroupSummary> {
        self.summary
            .groups
            .iter()
            .find(|g| g.sweep_value == sweep_value && g.time_index == time_index)
    }
}

/// 17 significant digits, enough to round-trip an `f64`.
fn real(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn int(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Resolved output file locations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
}

impl OutputPaths {
    /// Config paths, re-rooted under `dir` (file names kept) when given.
    /// Files default to `report.csv` / `report.json`.
    pub fn resolve(cfg: &ExperimentConfig, dir: Option<&Path>) -> Self {
        let pick = |p: &Option<PathBuf>, default: &str| {
            let p = p.clone().unwrap_or_else(|| PathBuf::from(default));
            match dir {
                Some(d) => d.join(p.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(default))),
                None => p,
            }
        };
        Self {
            csv: pick(&cfg.output.csv, "report.csv"),
            json: pick(&cfg.output.json, "report.json"),
        }
    }
}

pub fn emit_report(report: &RunReport, paths: &OutputPaths) -> Result<(), HarnessError> {
    write_file(&paths.csv, &report.csv())?;
    write_file(&paths.json, &report.json())
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    let io = |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}
