use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::aed::KpiRecord;
use crate::defenses::{DefensePolicy, PolicyId};

pub const ARTIFACT: &str = "aedsim";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The frozen CSV schema.
pub const CSV_HEADER: &str = "epoch,mode,attacker_phase,clean_acc,attacked_acc,detector_flag_rate,policy_id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub artifact: String,
    pub artifact_version: String,
    pub master_seed: u64,
    /// Fully resolved configuration.
    pub config: RunConfig,
    /// Share of the most common label on the evaluation split.
    pub majority_baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Deployment,
    FirstValidation,
    Escalation,
    ModeTransition,
    SurrogateRebuild,
    Refinement,
    ShadowStarted,
    ShadowPromoted,
    ShadowRejected,
    BaselineSaved,
    AttackCharacterized,
    AttackTrace,
    RedTeamEscalation,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub epoch: usize,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<PolicyId>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseStat {
    pub phase: u32,
    pub epochs: usize,
    pub mean_attacked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub final_window: usize,
    pub final_clean_mean: f64,
    pub final_attacked_mean: Option<f64>,
    pub t_min: f64,
    /// First epoch whose clean accuracy reached `t_min`.
    pub epochs_to_t_min_clean: Option<usize>,
    /// First epoch whose attacked accuracy reached `t_min`.
    pub epochs_to_t_min_attacked: Option<usize>,
    pub phases: Vec<PhaseStat>,
    /// Least-squares slope of the phase means against the phase index.
    pub phase_slope: Option<f64>,
    pub first_validated_epoch: Option<usize>,
    pub validation_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentLog {
    pub header: LogHeader,
    pub records: Vec<KpiRecord>,
    pub events: Vec<Event>,
    /// Every policy that was deployed or shadowed, by id.
    pub policies: BTreeMap<PolicyId, DefensePolicy>,
    pub summary: Summary,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Ordinary least-squares slope of `y` against `x`; `None` with fewer than two
/// distinct `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Mean attacked accuracy per attacker phase, in phase order.
pub fn phase_stats(records: &[KpiRecord]) -> Vec<PhaseStat> {
    let mut by_phase: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(a) = r.attacked_acc {
            by_phase.entry(r.attacker_phase).or_default().push(a);
        }
    }
    by_phase
        .into_iter()
        .map(|(phase, v)| PhaseStat {
            phase,
            epochs: v.len(),
            mean_attacked: mean(&v).expect("nonempty group"),
        })
        .collect()
}

pub fn summarize(
    records: &[KpiRecord],
    window: usize,
    t_min: f64,
    first_validated_epoch: Option<usize>,
    validation_calls: u64,
) -> Summary {
    let tail = &records[records.len().saturating_sub(window)..];
    let clean: Vec<f64> = tail.iter().map(|r| r.clean_acc).collect();
    let attacked: Vec<f64> = tail.iter().filter_map(|r| r.attacked_acc).collect();
    let phases = phase_stats(records);
    let slope = ols_slope(
        &phases
            .iter()
            .map(|p| (p.phase as f64, p.mean_attacked))
            .collect::<Vec<_>>(),
    );
    Summary {
        final_window: tail.len(),
        final_clean_mean: mean(&clean).unwrap_or(0.0),
        final_attacked_mean: mean(&attacked),
        t_min,
        epochs_to_t_min_clean: records.iter().find(|r| r.clean_acc >= t_min).map(|r| r.epoch),
        epochs_to_t_min_attacked: records
            .iter()
            .find(|r| r.attacked_acc.is_some_and(|a| a >= t_min))
            .map(|r| r.epoch),
        phases,
        phase_slope: slope,
        first_validated_epoch,
        validation_calls,
    }
}

/// One CSV row; floats use the shortest round-tripping representation.
pub fn csv_row(r: &KpiRecord) -> String {
    let attacked = r.attacked_acc.map(|a| a.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch,
        r.mode.as_str(),
        r.attacker_phase,
        r.clean_acc,
        attacked,
        r.detector_flag_rate,
        r.policy_id
    )
}

pub fn to_csv(records: &[KpiRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", csv_row(r));
    }
    out
}
