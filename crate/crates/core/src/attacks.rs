//! Red-team arsenal: white-box gradient attacks on normalized features,
//! replay of stale channel rows, label-flip poisoning, and the escalating
//! attacker that tunes its budget from observed accuracy.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelTrace, Dataset};
use crate::error::{AedError, Result};
use crate::predictor::{PredictorModel, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Replay,
    LabelFlip,
    None,
}

impl AttackKind {
    /// Whether the attack perturbs feature vectors at inference time.
    pub fn is_input_attack(self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::Pgd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackStrategy {
    pub kind: AttackKind,
    /// L-infinity budget in z-score units.
    pub eps: f64,
    /// PGD step size.
    pub alpha: f64,
    /// PGD iterations.
    pub steps: u32,
    /// Replay staleness in time steps.
    pub delay: usize,
    pub flip_fraction: f64,
    pub random_start: bool,
}

impl AttackStrategy {
    pub fn none() -> Self {
        Self {
            kind: AttackKind::None,
            eps: 0.0,
            alpha: 0.0,
            steps: 0,
            delay: 0,
            flip_fraction: 0.0,
            random_start: false,
        }
    }

    pub fn fgsm(eps: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            eps,
            ..Self::none()
        }
    }

    pub fn pgd(eps: f64, alpha: f64, steps: u32, random_start: bool) -> Self {
        Self {
            kind: AttackKind::Pgd,
            eps,
            alpha,
            steps,
            random_start,
            ..Self::none()
        }
    }

    pub fn validate(&self, eps_cap: f64) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(AedError::config("attacker.eps", "must be finite and nonnegative"));
        }
        if self.eps > eps_cap {
            return Err(AedError::config(
                "attacker.eps",
                format!("{} exceeds the physical budget {eps_cap}", self.eps),
            ));
        }
        if self.kind == AttackKind::Pgd {
            if self.alpha.is_nan() || self.alpha <= 0.0 {
                return Err(AedError::config("attacker.alpha", "must be positive for PGD"));
            }
            if self.alpha > self.eps {
                return Err(AedError::config("attacker.alpha", "PGD step size may not exceed eps"));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(AedError::config("attacker.flip_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Short label used in logs.
    pub fn describe(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("FGSM(eps={})", self.eps),
            AttackKind::Pgd => format!("PGD(eps={},alpha={},steps={})", self.eps, self.alpha, self.steps),
            AttackKind::Replay => format!("REPLAY(delay={})", self.delay),
            AttackKind::LabelFlip => format!("LABEL_FLIP(fraction={})", self.flip_fraction),
            AttackKind::None => "NONE".to_string(),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x + eps * sign(dL/dx)`.
pub fn fgsm(model: &PredictorModel, x: &[f64], label: usize, eps: f64) -> Result<Vec<f64>> {
    let g = model.input_grad(x, label)?;
    Ok(x.iter().zip(&g).map(|(xi, gi)| xi + eps * sign(*gi)).collect())
}

/// PGD that reports every iterate (including the start point) to `observe`.
pub fn pgd_observed<R: Rng>(
    model: &PredictorModel,
    x: &[f64],
    label: usize,
    strategy: &AttackStrategy,
    rng: &mut R,
    mut observe: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    if strategy.alpha > strategy.eps {
        return Err(AedError::config("attacker.alpha", "PGD step size may not exceed eps"));
    }
    if x.len() != model.input_dim() {
        return Err(AedError::argument("input dimension does not match the model"));
    }
    let mut ws = Workspace::default();
    let mut grad = Vec::with_capacity(x.len());
    let mut adv = x.to_vec();
    pgd_in_place(
        model,
        x,
        label,
        strategy,
        rng,
        &mut ws,
        &mut grad,
        &mut adv,
        &mut observe,
    );
    Ok(adv)
}

pub fn pgd<R: Rng>(
    model: &PredictorModel,
    x: &[f64],
    label: usize,
    strategy: &AttackStrategy,
    rng: &mut R,
) -> Result<Vec<f64>> {
    pgd_observed(model, x, label, strategy, rng, |_| {})
}

#[allow(clippy::too_many_arguments)]
fn pgd_in_place<R: Rng>(
    model: &PredictorModel,
    x: &[f64],
    label: usize,
    strategy: &AttackStrategy,
    rng: &mut R,
    ws: &mut Workspace,
    grad: &mut Vec<f64>,
    adv: &mut [f64],
    observe: &mut impl FnMut(&[f64]),
) {
    let eps = strategy.eps;
    adv.copy_from_slice(x);
    if strategy.random_start && eps > 0.0 {
        for v in adv.iter_mut() {
            *v += rng.random_range(-eps..=eps);
        }
    }
    observe(adv);
    for _ in 0..strategy.steps {
        model.input_grad_with(adv, label, ws, grad);
        for ((a, &c), &g) in adv.iter_mut().zip(x).zip(grad.iter()) {
            *a = (*a + strategy.alpha * sign(g)).clamp(c - eps, c + eps);
        }
        observe(adv);
    }
}

/// Scratch state for perturbing many samples against one model.
#[derive(Debug, Default)]
pub struct Perturber {
    ws: Workspace,
    grad: Vec<f64>,
}

impl Perturber {
    /// Applies an input-space attack; non-input attacks return `x` unchanged.
    pub fn perturb<R: Rng>(
        &mut self,
        model: &PredictorModel,
        x: &[f64],
        label: usize,
        strategy: &AttackStrategy,
        rng: &mut R,
    ) -> Vec<f64> {
        let mut adv = x.to_vec();
        match strategy.kind {
            AttackKind::Fgsm => {
                model.input_grad_with(x, label, &mut self.ws, &mut self.grad);
                for (a, &g) in adv.iter_mut().zip(&self.grad) {
                    *a += strategy.eps * sign(g);
                }
            }
            AttackKind::Pgd => {
                pgd_in_place(
                    model,
                    x,
                    label,
                    strategy,
                    rng,
                    &mut self.ws,
                    &mut self.grad,
                    &mut adv,
                    &mut |_| {},
                );
            }
            AttackKind::Replay | AttackKind::LabelFlip | AttackKind::None => {}
        }
        adv
    }
}

/// Row `t` of the result is row `max(0, t - delay)` of the input.
pub fn replay(trace: &ChannelTrace, delay: usize) -> Result<ChannelTrace> {
    let t_len = trace.len();
    if delay >= t_len {
        return Err(AedError::argument(format!(
            "replay delay {delay} must be below the trace length {t_len}"
        )));
    }
    let n = trace.n_ports;
    let mut out = ChannelTrace {
        n_ports: n,
        gains: Vec::with_capacity(trace.gains.len()),
        mags: Vec::with_capacity(trace.mags.len()),
        seed: trace.seed,
    };
    for t in 0..t_len {
        let src = t.saturating_sub(delay);
        out.gains.extend_from_slice(trace.gains_row(src));
        out.mags.extend_from_slice(trace.mags_row(src));
    }
    Ok(out)
}

/// Relabels exactly `round(flip_fraction * M)` distinct samples with a
/// uniformly chosen different port.
pub fn label_flip<R: Rng>(data: &Dataset, flip_fraction: f64, n_ports: usize, rng: &mut R) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(AedError::argument("flip fraction must lie in [0, 1]"));
    }
    if n_ports < 2 {
        return Err(AedError::argument("label flipping needs at least two ports"));
    }
    let count = (flip_fraction * data.len() as f64).round() as usize;
    let mut out = data.clone();
    for i in index::sample(rng, data.len(), count.min(data.len())) {
        let old = out.labels[i];
        out.labels[i] = (old + 1 + rng.random_range(0..n_ports - 1)) % n_ports;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerState {
    pub strategy: AttackStrategy,
    /// The adversary keeps escalating while accuracy stays above this.
    pub target_accuracy: f64,
    pub escalation_step: f64,
    pub eps_cap: f64,
    pub steps_cap: u32,
    /// Number of escalations so far.
    pub phase: u32,
    /// `(epoch, observed accuracy under attack)`.
    pub history: Vec<(usize, f64)>,
}

impl AttackerState {
    pub fn new(
        strategy: AttackStrategy,
        target_accuracy: f64,
        escalation_step: f64,
        eps_cap: f64,
        steps_cap: u32,
    ) -> Self {
        Self {
            strategy,
            target_accuracy,
            escalation_step,
            eps_cap,
            steps_cap,
            phase: 0,
            history: Vec::new(),
        }
    }

    /// Applies the escalation rule to one observation and returns whether the
    /// attacker escalated. Only input attacks have a budget to escalate, and a
    /// phase only starts when eps or steps actually grew.
    pub fn evolve(&mut self, epoch: usize, observed_accuracy: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&observed_accuracy) {
            return Err(AedError::argument(format!(
                "observed accuracy {observed_accuracy} outside [0, 1]"
            )));
        }
        self.history.push((epoch, observed_accuracy));
        if observed_accuracy <= self.target_accuracy || !self.strategy.kind.is_input_attack() {
            return Ok(false);
        }
        let s = &mut self.strategy;
        let eps = (s.eps + self.escalation_step).min(self.eps_cap).max(s.eps);
        let steps = (s.steps + 1).min(self.steps_cap).max(s.steps);
        if eps == s.eps && steps == s.steps {
            // Saturated: nothing left to escalate, so no new phase.
            return Ok(false);
        }
        s.eps = eps;
        s.steps = steps;
        self.phase += 1;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_trace, EnvConfig};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> PredictorModel {
        PredictorModel::init(&[6, 8, 4], 0.8, 3).unwrap()
    }

    #[test]
    fn fgsm_examples() {
        let m = model();
        let x = [0.1, -0.2, 0.3, 0.0, 1.0, -1.0];
        assert_eq!(fgsm(&m, &x, 2, 0.0).unwrap(), x.to_vec());
        let adv = fgsm(&m, &x, 2, 0.1).unwrap();
        let g = m.input_grad(&x, 2).unwrap();
        for i in 0..x.len() {
            let d = (adv[i] - x[i]).abs();
            if g[i] != 0.0 {
                assert!((d - 0.1).abs() < 1e-12);
            } else {
                assert_eq!(d, 0.0);
            }
        }
        assert!(fgsm(&m, &x[..3], 2, 0.1).is_err());
    }

    #[test]
    fn fgsm_direction_on_linear_model() {
        // Logit difference z1 - z0 = 2x with positive weight on port 1. With the
        // true label 0, raising x makes port 1 likelier, so the loss grows with x.
        let lin = PredictorModel::from_params(&[1, 2], vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
        let adv = fgsm(&lin, &[0.3], 0, 0.05).unwrap();
        assert!((adv[0] - 0.35).abs() < 1e-15);
        let adv = fgsm(&lin, &[0.3], 1, 0.05).unwrap();
        assert!((adv[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pgd_examples() {
        let m = model();
        let x = [0.4, -0.1, 0.2, 0.9, -0.5, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = AttackStrategy::pgd(0.2, 0.05, 0, false);
        assert_eq!(pgd(&m, &x, 1, &none, &mut rng).unwrap(), x.to_vec());

        let one = AttackStrategy::pgd(0.2, 0.2, 1, false);
        assert_eq!(pgd(&m, &x, 1, &one, &mut rng).unwrap(), fgsm(&m, &x, 1, 0.2).unwrap());

        let bad = AttackStrategy::pgd(0.1, 0.2, 3, false);
        assert!(pgd(&m, &x, 1, &bad, &mut rng).is_err());

        let many = AttackStrategy::pgd(0.15, 0.04, 12, true);
        let mut iterates = 0;
        pgd_observed(&m, &x, 3, &many, &mut rng, |it| {
            iterates += 1;
            for (a, c) in it.iter().zip(&x) {
                assert!((a - c).abs() <= 0.15 + 1e-12);
            }
        })
        .unwrap();
        assert_eq!(iterates, 13);
    }

    fn counting_trace(len: usize) -> ChannelTrace {
        ChannelTrace {
            n_ports: 2,
            gains: (0..len * 2).map(|k| Complex64::new((k / 2) as f64, 0.0)).collect(),
            mags: (0..len * 2).map(|k| (k / 2) as f64).collect(),
            seed: 0,
        }
    }

    #[test]
    fn replay_examples() {
        let trace = counting_trace(20);
        assert_eq!(replay(&trace, 0).unwrap(), trace);
        let shifted = replay(&trace, 3).unwrap();
        assert_eq!(shifted.mags_row(10), &[7.0, 7.0]);
        assert_eq!(shifted.mags_row(2), &[0.0, 0.0]);
        assert_eq!(shifted.len(), 20);
        let saturated = replay(&trace, 19).unwrap();
        for t in 0..19 {
            assert_eq!(saturated.mags_row(t), &[0.0, 0.0]);
        }
        assert_eq!(saturated.mags_row(19), &[0.0, 0.0]);
        assert!(replay(&trace, 20).is_err());
    }

    fn dataset(m: usize) -> Dataset {
        let trace = generate_trace(&EnvConfig::default().with_len(m + 4), 1).unwrap();
        crate::channel::make_dataset(&trace, 4).unwrap()
    }

    #[test]
    fn label_flip_examples() {
        let data = dataset(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(label_flip(&data, 0.0, 8, &mut rng).unwrap(), data);

        let all = label_flip(&data, 1.0, 8, &mut rng).unwrap();
        assert!(all.labels.iter().zip(&data.labels).all(|(a, b)| a != b));
        assert_eq!(all.features, data.features);

        let tenth = label_flip(&data, 0.1, 8, &mut rng).unwrap();
        let changed = tenth.labels.iter().zip(&data.labels).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 100);
    }

    fn attacker(eps: f64) -> AttackerState {
        AttackerState::new(AttackStrategy::pgd(eps, eps.min(0.01), 2, false), 0.3, 0.01, 0.1, 10)
    }

    #[test]
    fn escalation_rule() {
        let mut a = attacker(0.05);
        let before = a.strategy.clone();
        assert!(!a.evolve(0, 0.0).unwrap());
        assert_eq!(a.strategy, before);
        assert_eq!(a.phase, 0);
        assert_eq!(a.history.len(), 1);

        let mut capped = attacker(0.1);
        capped.evolve(1, 0.9).unwrap();
        assert_eq!(capped.strategy.eps, 0.1);

        let mut a = attacker(0.01);
        for epoch in 0..20 {
            a.evolve(epoch, 0.9).unwrap();
            if epoch == 8 {
                assert!((a.strategy.eps - 0.1).abs() < 1e-12, "eps {} after 9", a.strategy.eps);
            }
        }
        assert!((a.strategy.eps - 0.1).abs() < 1e-12);
        assert_eq!(a.strategy.steps, 10);
        let phase = a.phase;
        assert!(!a.evolve(20, 0.9).unwrap());
        assert_eq!(a.phase, phase);
        assert!(a.evolve(21, 1.5).is_err());
    }

    #[test]
    fn passive_attacker_never_escalates() {
        let mut a = AttackerState::new(AttackStrategy::none(), 0.1, 0.05, 0.5, 10);
        assert!(!a.evolve(0, 0.99).unwrap());
        assert_eq!(a.phase, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn escalation_is_monotone(obs in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            let mut a = attacker(0.02);
            for (e, o) in obs.iter().enumerate() {
                let (eps, steps) = (a.strategy.eps, a.strategy.steps);
                a.evolve(e, *o).unwrap();
                prop_assert!(a.strategy.eps >= eps && a.strategy.steps >= steps);
                prop_assert!(a.strategy.validate(a.eps_cap).is_ok());
            }
        }
    }
}
