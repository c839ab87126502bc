use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::log::{summarize, ExperimentLog, Summary};
use crate::aed::Thresholds;
use crate::error::{AedError, Result};

/// Per-log figures, recomputed from the records rather than trusted from the
/// stored summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogReport {
    pub path: PathBuf,
    pub scenario: String,
    pub master_seed: u64,
    pub summary: Summary,
}

/// Differences of a log against the first log given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossDelta {
    pub path: PathBuf,
    pub reference: PathBuf,
    pub final_clean: f64,
    pub final_attacked: Option<f64>,
    pub epochs_to_t_min_clean: Option<i64>,
    pub epochs_to_t_min_attacked: Option<i64>,
    pub phase_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub logs: Vec<LogReport>,
    pub deltas: Vec<CrossDelta>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> AedError {
    AedError::MalformedLog {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads and checks a `log.json`.
pub fn load_log(path: &Path) -> Result<ExperimentLog> {
    let text = std::fs::read_to_string(path).map_err(|e| AedError::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let log: ExperimentLog = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let at = e.path().to_string();
        let row = at
            .strip_prefix("records[")
            .and_then(|r| r.split(']').next())
            .map(|r| format!("first bad row: record {r}, "))
            .unwrap_or_default();
        malformed(path, format!("{row}at `{at}`: {}", e.inner()))
    })?;
    let mut prev = None;
    for (i, r) in log.records.iter().enumerate() {
        if prev.is_some_and(|p| r.epoch <= p) {
            return Err(malformed(
                path,
                format!("first bad row: record {i}, epoch {} not increasing", r.epoch),
            ));
        }
        let accs = [Some(r.clean_acc), r.attacked_acc, Some(r.detector_flag_rate)];
        if accs.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(malformed(
                path,
                format!("first bad row: record {i}, value outside [0, 1]"),
            ));
        }
        prev = Some(r.epoch);
    }
    if let Some((i, ev)) = log
        .events
        .iter()
        .enumerate()
        .find(|(_, ev)| !log.records.iter().any(|r| r.epoch == ev.epoch))
    {
        return Err(malformed(
            path,
            format!("event {i} references unknown epoch {}", ev.epoch),
        ));
    }
    Ok(log)
}

fn log_report(path: &Path, log: &ExperimentLog) -> LogReport {
    let th = log.header.config.thresholds.clone().unwrap_or_default();
    let defaults = Thresholds::default();
    let window = if th.kpi_window == 0 {
        defaults.kpi_window
    } else {
        th.kpi_window
    };
    LogReport {
        path: path.to_path_buf(),
        scenario: log.header.config.scenario.as_str().to_string(),
        master_seed: log.header.master_seed,
        summary: summarize(
            &log.records,
            window,
            th.t_min,
            log.summary.first_validated_epoch,
            log.summary.validation_calls,
        ),
    }
}

fn opt_sub(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn opt_isub(a: Option<usize>, b: Option<usize>) -> Option<i64> {
    Some(a? as i64 - b? as i64)
}

/// Summaries for each log plus deltas of every later log against the first.
pub fn report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(AedError::argument("report needs at least one log"));
    }
    let logs: Vec<LogReport> = paths
        .iter()
        .map(|p| load_log(p).map(|l| log_report(p, &l)))
        .collect::<Result<_>>()?;
    let first = &logs[0];
    let deltas = logs
        .iter()
        .skip(1)
        .map(|l| CrossDelta {
            path: l.path.clone(),
            reference: first.path.clone(),
            final_clean: l.summary.final_clean_mean - first.summary.final_clean_mean,
            final_attacked: opt_sub(l.summary.final_attacked_mean, first.summary.final_attacked_mean),
            epochs_to_t_min_clean: opt_isub(l.summary.epochs_to_t_min_clean, first.summary.epochs_to_t_min_clean),
            epochs_to_t_min_attacked: opt_isub(
                l.summary.epochs_to_t_min_attacked,
                first.summary.epochs_to_t_min_attacked,
            ),
            phase_slope: opt_sub(l.summary.phase_slope, first.summary.phase_slope),
        })
        .collect();
    Ok(Report { logs, deltas })
}

fn show<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn show_f(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.logs {
            let s = &l.summary;
            let _ = writeln!(out, "{} [{} seed {}]", l.path.display(), l.scenario, l.master_seed);
            let _ = writeln!(
                out,
                "  final {}-epoch mean clean     {:.4}",
                s.final_window, s.final_clean_mean
            );
            let _ = writeln!(
                out,
                "  final {}-epoch mean attacked  {}",
                s.final_window,
                show_f(s.final_attacked_mean)
            );
            let _ = writeln!(
                out,
                "  epochs to t_min={} clean/attacked  {} / {}",
                s.t_min,
                show(s.epochs_to_t_min_clean),
                show(s.epochs_to_t_min_attacked)
            );
            if s.phases.is_empty() {
                let _ = writeln!(out, "  attacker phases  -");
            } else {
                let _ = writeln!(out, "  phase  epochs  mean attacked");
                for p in &s.phases {
                    let _ = writeln!(out, "  {:>5}  {:>6}  {:.4}", p.phase, p.epochs, p.mean_attacked);
                }
                let _ = writeln!(out, "  phase trend slope  {}", show_f(s.phase_slope));
            }
        }
        for d in &self.deltas {
            let _ = writeln!(out, "{} vs {}", d.path.display(), d.reference.display());
            let _ = writeln!(out, "  d final clean     {:+.4}", d.final_clean);
            let _ = writeln!(
                out,
                "  d final attacked  {}",
                d.final_attacked.map_or("-".into(), |v| format!("{v:+.4}"))
            );
            let _ = writeln!(
                out,
                "  d epochs to t_min clean/attacked  {} / {}",
                show(d.epochs_to_t_min_clean),
                show(d.epochs_to_t_min_attacked)
            );
            let _ = writeln!(
                out,
                "  d phase slope     {}",
                d.phase_slope.map_or("-".into(), |v| format!("{v:+.4}"))
            );
        }
        out
    }
}
