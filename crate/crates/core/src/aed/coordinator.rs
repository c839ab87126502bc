use serde::{Deserialize, Serialize};

use super::pool::PolicyPool;
use crate::defenses::{DefensePolicy, PolicyId};
use crate::error::{AedError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Minimum acceptable accuracy.
    pub t_min: f64,
    /// Windowed accuracy drop that counts as an attack.
    pub t_detect_drop: f64,
    /// Epochs per KPI window.
    pub kpi_window: usize,
    /// z-score threshold of the coordinator's own input monitor. Fixed so the
    /// logged flag rate does not move when the deployed policy changes.
    pub monitor_z: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            t_min: 0.4,
            t_detect_drop: 0.1,
            kpi_window: 3,
            monitor_z: 3.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.t_min) {
            return Err(AedError::config("thresholds.t_min", "must lie in [0, 1)"));
        }
        if !(self.t_detect_drop > 0.0 && self.t_detect_drop < 1.0) {
            return Err(AedError::config("thresholds.t_detect_drop", "must lie in (0, 1)"));
        }
        if self.kpi_window == 0 {
            return Err(AedError::config("thresholds.kpi_window", "must be positive"));
        }
        if !(self.monitor_z > 0.0 && self.monitor_z.is_finite()) {
            return Err(AedError::config("thresholds.monitor_z", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Normal,
    UnderAttack,
    Fallback,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Normal => "NORMAL",
            Mode::UnderAttack => "UNDER_ATTACK",
            Mode::Fallback => "FALLBACK",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "NORMAL" => Ok(Mode::Normal),
            "UNDER_ATTACK" => Ok(Mode::UnderAttack),
            "FALLBACK" => Ok(Mode::Fallback),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// One epoch's measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiRecord {
    pub epoch: usize,
    pub mode: Mode,
    pub attacker_phase: u32,
    pub clean_acc: f64,
    /// Absent when no attacker is evaluated.
    pub attacked_acc: Option<f64>,
    pub detector_flag_rate: f64,
    pub policy_id: PolicyId,
}

impl KpiRecord {
    /// The accuracy the coordinator reacts to: attacked if measured, else clean.
    pub fn observed(&self) -> f64 {
        self.attacked_acc.unwrap_or(self.clean_acc)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Windowed attack detector. The baseline is the first full window of the
/// trailing run of NORMAL records; fires when the latest window's mean
/// accuracy fell more than `t_detect_drop` below it, or its mean flag rate
/// exceeds three times the baseline's.
pub fn detect_attack(history: &[KpiRecord], thresholds: &Thresholds) -> bool {
    let w = thresholds.kpi_window;
    if w == 0 || history.len() < w {
        return false;
    }
    let run_start = history
        .iter()
        .rposition(|r| r.mode != Mode::Normal)
        .map_or(0, |i| i + 1);
    let run = &history[run_start..];
    if run.len() < w {
        return false;
    }
    let base = &run[..w];
    let latest = &history[history.len() - w..];
    let base_acc = mean(base.iter().map(KpiRecord::observed));
    let latest_acc = mean(latest.iter().map(KpiRecord::observed));
    let base_flags = mean(base.iter().map(|r| r.detector_flag_rate));
    let latest_flags = mean(latest.iter().map(|r| r.detector_flag_rate));
    latest_acc < base_acc - thresholds.t_detect_drop || latest_flags > 3.0 * base_flags
}

/// A candidate running alongside the deployed policy before promotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub policy: DefensePolicy,
    pub fitness: f64,
    /// Live accuracy per epoch since the shadow started.
    pub observed: Vec<f64>,
}

/// What one coordinator step did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutcome {
    pub from: Option<Mode>,
    pub to: Option<Mode>,
    pub detected: bool,
    pub emergency: Option<PolicyId>,
    pub promoted: Option<PolicyId>,
    pub shadow_rejected: Option<PolicyId>,
    pub baseline_saved: Option<PolicyId>,
    pub reverted_to: Option<PolicyId>,
}

impl StepOutcome {
    pub fn changed_mode(&self) -> bool {
        self.from != self.to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorState {
    pub mode: Mode,
    pub deployed: DefensePolicy,
    pub deployed_fitness: f64,
    /// Last validated stable policy and its fitness; `None` until the first
    /// validated deployment.
    pub baseline: Option<(DefensePolicy, f64)>,
    pub kpi_history: Vec<KpiRecord>,
    pub shadow: Option<Shadow>,
    /// Emergency refinement iterations allowed per attack episode.
    pub refine_budget: usize,
    pub refine_used: usize,
    /// Consecutive epochs at or above `t_min` in the current mode.
    pub recovery_streak: usize,
}

impl CoordinatorState {
    /// A coordinator with a deployed policy but no validated baseline yet.
    pub fn new(deployed: DefensePolicy, refine_budget: usize) -> Self {
        Self {
            mode: Mode::Normal,
            deployed,
            deployed_fitness: 0.0,
            baseline: None,
            kpi_history: Vec::new(),
            shadow: None,
            refine_budget,
            refine_used: 0,
            recovery_streak: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.baseline.is_some()
    }

    /// First validated deployment: the policy becomes both deployed and baseline.
    pub fn install_baseline(&mut self, policy: DefensePolicy, fitness: f64) {
        self.deployed = policy.clone();
        self.deployed_fitness = fitness;
        self.baseline = Some((policy, fitness));
    }

    /// Replaces the deployed policy outside of a mode transition.
    pub fn deploy(&mut self, policy: DefensePolicy, fitness: f64) {
        self.deployed = policy;
        self.deployed_fitness = fitness;
    }

    /// Re-measured fitnesses on the current model.
    pub fn refresh_fitness(&mut self, deployed: f64, baseline: Option<f64>) {
        self.deployed_fitness = deployed;
        if let (Some((_, f)), Some(b)) = (self.baseline.as_mut(), baseline) {
            *f = b;
        }
    }

    pub fn start_shadow(&mut self, policy: DefensePolicy, fitness: f64) {
        self.shadow = Some(Shadow {
            policy,
            fitness,
            observed: Vec::new(),
        });
    }

    pub fn observe_shadow(&mut self, accuracy: f64) {
        if let Some(s) = self.shadow.as_mut() {
            s.observed.push(accuracy);
        }
    }

    pub fn refinements_left(&self) -> usize {
        self.refine_budget.saturating_sub(self.refine_used)
    }

    pub fn record_refinement(&mut self) {
        self.refine_used += 1;
    }

    fn enter(&mut self, mode: Mode) {
        self.mode = mode;
        self.recovery_streak = 0;
    }

    /// Feeds one epoch's KPI through the transition table. The record is
    /// appended to the history with the mode in force after the step.
    /// A NORMAL epoch below `t_min` counts as a detection.
    pub fn co_step(&mut self, kpi: KpiRecord, thresholds: &Thresholds, pool: &mut PolicyPool) -> Result<StepOutcome> {
        let Some((baseline, baseline_fitness)) = self.baseline.clone() else {
            return Err(AedError::State("coordinator has no validated baseline".into()));
        };
        let observed = kpi.observed();
        let ok = observed >= thresholds.t_min;
        let mut rec = kpi;
        rec.mode = self.mode;
        self.kpi_history.push(rec);
        let mut out = StepOutcome {
            from: Some(self.mode),
            ..StepOutcome::default()
        };
        self.recovery_streak = if ok { self.recovery_streak + 1 } else { 0 };
        let w = thresholds.kpi_window;

        match self.mode {
            Mode::Normal => {
                out.detected = detect_attack(&self.kpi_history, thresholds);
                if out.detected || !ok {
                    self.enter(Mode::UnderAttack);
                    pool.freeze();
                    self.shadow = None;
                    self.refine_used = 0;
                    if let Some(e) = pool.best() {
                        out.emergency = Some(e.policy.id);
                        self.deployed = e.policy.clone();
                        self.deployed_fitness = e.fitness.unwrap_or(0.0);
                    }
                } else {
                    if let Some(shadow) = self.shadow.as_ref().filter(|s| s.observed.len() >= w) {
                        let n = self.kpi_history.len();
                        let live = mean(self.kpi_history[n - w..].iter().map(KpiRecord::observed));
                        let cand = mean(shadow.observed[shadow.observed.len() - w..].iter().copied());
                        if cand >= live {
                            out.promoted = Some(shadow.policy.id);
                            self.deployed = shadow.policy.clone();
                            self.deployed_fitness = shadow.fitness;
                        } else {
                            out.shadow_rejected = Some(shadow.policy.id);
                        }
                        self.shadow = None;
                    }
                    out.baseline_saved = self.save_stable(&baseline, baseline_fitness);
                }
            }
            Mode::UnderAttack => {
                if self.recovery_streak >= w {
                    self.enter(Mode::Normal);
                    pool.unfreeze();
                    out.baseline_saved = self.save_stable(&baseline, baseline_fitness);
                } else if !ok && self.refinements_left() == 0 {
                    self.enter(Mode::Fallback);
                    out.reverted_to = Some(baseline.id);
                    self.deployed = baseline;
                    self.deployed_fitness = baseline_fitness;
                }
            }
            Mode::Fallback => {
                if self.recovery_streak >= w {
                    self.enter(Mode::Normal);
                    pool.unfreeze();
                }
            }
        }
        out.to = Some(self.mode);
        self.kpi_history.last_mut().expect("just pushed").mode = self.mode;
        Ok(out)
    }

    /// Promotes the deployed policy to baseline if it validates at least as
    /// well as the current one.
    fn save_stable(&mut self, baseline: &DefensePolicy, baseline_fitness: f64) -> Option<PolicyId> {
        if self.deployed.id != baseline.id && self.deployed_fitness >= baseline_fitness {
            self.baseline = Some((self.deployed.clone(), self.deployed_fitness));
            Some(self.deployed.id)
        } else {
            None
        }
    }
}
