//! Experiment orchestration: configuration, scenario runs, output files and
//! cross-run reports.

mod config;
mod experiment;
mod log;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{parse_config, AttackerInit, RunConfig, Scenario};
pub use experiment::{aed_run, AedLoop, Experiment, GenerationReport};
pub use log::{
    csv_row, ols_slope, phase_stats, summarize, to_csv, Event, EventKind, ExperimentLog, LogHeader, PhaseStat, Summary,
    ARTIFACT, ARTIFACT_VERSION, CSV_HEADER,
};
pub use report::{load_log, report, CrossDelta, LogReport, Report};

use crate::error::{AedError, Result};

pub const LOG_FILE: &str = "log.json";
pub const CSV_FILE: &str = "kpi.csv";
pub const POLICIES_FILE: &str = "policies.json";

/// Runs a scenario and writes `log.json`, `kpi.csv` and `policies.json` to
/// the configured output directory. Nothing is left behind on failure.
pub fn run_scenario(cfg: &RunConfig) -> Result<ExperimentLog> {
    let log = Experiment::new(cfg.clone())?.run()?;
    write_outputs(&log, &cfg.output_dir)?;
    Ok(log)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| AedError::State(format!("serializing log: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes the three output files, removing any of them if a later write fails.
pub fn write_outputs(log: &ExperimentLog, dir: &Path) -> Result<()> {
    let created_dir = !dir.exists();
    fs::create_dir_all(dir).map_err(|e| AedError::io(dir, e))?;
    let files: [(PathBuf, String); 3] = [
        (dir.join(LOG_FILE), to_json(log)?),
        (dir.join(CSV_FILE), to_csv(&log.records)),
        (dir.join(POLICIES_FILE), to_json(&log.policies)?),
    ];
    let mut written = Vec::new();
    for (path, body) in &files {
        if let Err(e) = fs::write(path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created_dir {
                let _ = fs::remove_dir(dir);
            }
            return Err(AedError::io(path, e));
        }
        written.push(path.clone());
    }
    Ok(())
}
