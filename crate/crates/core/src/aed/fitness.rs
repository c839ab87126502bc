use serde::{Deserialize, Serialize};

use super::priors::{PriorBounds, N_KNOBS};
use crate::attacks::{AttackKind, AttackStrategy, AttackerState};
use crate::channel::Dataset;
use crate::defenses::{evaluate_defended, DefendedOutcome, DefensePolicy, FeatureStats};
use crate::error::{AedError, Result};
use crate::predictor::PredictorModel;
use crate::seed;

/// Surrogate family tag recorded in logs.
pub const SURROGATE_FAMILY: &str = "1nn-minmax-euclidean";

/// Prediction used when the surrogate has seen nothing yet.
pub const PRIOR_FITNESS: f64 = 0.5;

/// 1-nearest-neighbour fitness predictor over min-max normalized knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub family: String,
    priors: PriorBounds,
    points: Vec<([f64; N_KNOBS], f64)>,
}

impl Surrogate {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn predict(&self, policy: &DefensePolicy) -> f64 {
        let v = self.priors.normalize(policy);
        let mut best = (f64::INFINITY, PRIOR_FITNESS);
        for (p, f) in &self.points {
            let d: f64 = p.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, *f);
            }
        }
        best.1.clamp(0.0, 1.0)
    }
}

/// Fits the surrogate. A knob vector seen more than once keeps its latest
/// fitness.
pub fn fe_fit(history: &[(DefensePolicy, f64)], priors: &PriorBounds) -> Surrogate {
    let mut points: Vec<([f64; N_KNOBS], f64)> = Vec::with_capacity(history.len());
    for (policy, fitness) in history {
        let v = priors.normalize(policy);
        match points.iter_mut().find(|(p, _)| *p == v) {
            Some(slot) => slot.1 = *fitness,
            None => points.push((v, *fitness)),
        }
    }
    Surrogate {
        family: SURROGATE_FAMILY.to_string(),
        priors: priors.clone(),
        points,
    }
}

/// Top `k` candidates by predicted fitness, descending, ties to the lower id.
pub fn fe_rank(surrogate: &Surrogate, candidates: &[DefensePolicy], k: usize) -> Result<Vec<DefensePolicy>> {
    if k == 0 {
        return Err(AedError::argument("k must be at least 1"));
    }
    let mut scored: Vec<(f64, &DefensePolicy)> = candidates.iter().map(|c| (surrogate.predict(c), c)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    Ok(scored.into_iter().take(k).map(|(_, c)| c.clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    /// `(policy, worst-case accuracy)`, ordered by policy id.
    pub scores: Vec<(DefensePolicy, f64)>,
    /// Per policy, accuracy on the clean case followed by each admitted attack.
    pub per_case: Vec<Vec<f64>>,
    /// Attacks dropped for exceeding the physical budget.
    pub rejected: Vec<AttackStrategy>,
}

impl Validation {
    /// Highest fitness, ties to the lower id.
    pub fn best(&self) -> Option<&(DefensePolicy, f64)> {
        self.scores
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.id.cmp(&a.0.id)))
    }
}

/// Red-team engine: scores policies on the DT split and escalates the attack
/// set against the policies that hold up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessEvaluator {
    pub eps_cap: f64,
    validation_calls: u64,
}

impl FitnessEvaluator {
    pub fn new(eps_cap: f64) -> Self {
        Self {
            eps_cap,
            validation_calls: 0,
        }
    }

    /// Total number of candidates scored so far.
    pub fn validation_calls(&self) -> u64 {
        self.validation_calls
    }

    /// Fitness is the minimum defended accuracy over the clean case and every
    /// admissible attack. The clean case uses substream `derive(seed, 0)` and
    /// attack `j` uses `derive(seed, 1 + j)`.
    #[allow(clippy::too_many_arguments)]
    pub fn validate(
        &mut self,
        candidates: &[DefensePolicy],
        model: &PredictorModel,
        dt: &Dataset,
        attacks: &[AttackStrategy],
        stats: &FeatureStats,
        seed: u64,
    ) -> Result<Validation> {
        if dt.is_empty() {
            return Err(AedError::argument("DT dataset is empty"));
        }
        let mut order: Vec<&DefensePolicy> = candidates.iter().collect();
        order.sort_by_key(|p| p.id);
        let mut rejected = Vec::new();
        let mut per_case: Vec<Vec<f64>> =
            evaluate_defended(model, dt, &order, &AttackStrategy::none(), stats, seed::derive(seed, 0))?
                .into_iter()
                .map(|o| vec![o.accuracy])
                .collect();
        for (j, attack) in attacks.iter().enumerate() {
            if attack.validate(self.eps_cap).is_err() {
                rejected.push(attack.clone());
                continue;
            }
            let outcomes = evaluate_defended(model, dt, &order, attack, stats, seed::derive(seed, 1 + j as u64))?;
            for (cases, o) in per_case.iter_mut().zip(outcomes) {
                cases.push(o.accuracy);
            }
        }
        self.validation_calls += candidates.len() as u64;
        let fitness = per_case.iter().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min));
        Ok(Validation {
            scores: order.into_iter().cloned().zip(fitness).collect(),
            per_case,
            rejected,
        })
    }

    /// Feeds each attacker the best accuracy any qualified policy kept under
    /// it; returns which attackers escalated. Attack `j` uses substream
    /// `derive(seed, j)`.
    #[allow(clippy::too_many_arguments)]
    pub fn enhance_attacks(
        &self,
        attack_set: &mut [AttackerState],
        qualified: &[DefensePolicy],
        model: &PredictorModel,
        dt: &Dataset,
        stats: &FeatureStats,
        seed: u64,
        epoch: usize,
    ) -> Result<Vec<bool>> {
        if qualified.is_empty() {
            return Ok(vec![false; attack_set.len()]);
        }
        let refs: Vec<&DefensePolicy> = qualified.iter().collect();
        let mut escalated = Vec::with_capacity(attack_set.len());
        for (j, attacker) in attack_set.iter_mut().enumerate() {
            let outcomes = evaluate_defended(
                model,
                dt,
                &refs,
                &attacker.strategy,
                stats,
                seed::derive(seed, j as u64),
            )?;
            let best = outcomes.iter().map(|o| o.accuracy).fold(0.0, f64::max);
            escalated.push(attacker.evolve(epoch, best)?);
        }
        Ok(escalated)
    }
}

/// What the attack branch could infer about the live attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub kind: AttackKind,
    /// Estimated L-inf budget in feature units, when anything was flagged.
    pub eps_estimate: Option<f64>,
    pub flagged: usize,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Estimates the live attack's budget from how far flagged samples sat past
/// the detector (95th percentile, scaled by the mean feature std) and names
/// the red-team attack whose DT accuracy is closest to what was observed.
pub fn characterize_attack(
    live: &DefendedOutcome,
    observed_accuracy: f64,
    red_team: &[AttackerState],
    red_team_accuracy: &[f64],
    stats: &FeatureStats,
) -> Characterization {
    let dims = stats.mean.len().max(1);
    let scale = (0..stats.mean.len()).map(|d| stats.std(d)).sum::<f64>() / dims as f64;
    let kind = red_team
        .iter()
        .zip(red_team_accuracy)
        .min_by(|a, b| {
            (a.1 - observed_accuracy)
                .abs()
                .total_cmp(&(b.1 - observed_accuracy).abs())
        })
        .map(|(a, _)| a.strategy.kind)
        .unwrap_or(AttackKind::None);
    Characterization {
        kind,
        eps_estimate: percentile(&live.flag_excess, 0.95).map(|e| e * scale),
        flagged: live.flag_excess.len(),
    }
}
