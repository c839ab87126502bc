//! Defense-policy space and the defended inference/training paths.
//!
//! Inference pipeline order is fixed: anomaly check and clamp, then
//! quantization, then the smoothed vote. Adversarial training only touches the
//! training loop.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackStrategy, Perturber};
use crate::channel::Dataset;
use crate::error::{AedError, Result};
use crate::predictor::{shuffled_batches, PredictorModel, TrainConfig, Workspace};
use crate::seed;

pub type PolicyId = u64;

/// Lower clamp on per-dimension std.
pub const STD_FLOOR: f64 = 1e-9;
/// Quantizer range in z-score units.
pub const QUANT_RANGE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefensePolicy {
    pub id: PolicyId,
    /// Fraction of each training minibatch replaced by PGD examples.
    pub adv_ratio: f64,
    /// Std of the Gaussian noise added to each smoothing vote.
    pub smooth_sigma: f64,
    pub votes: u32,
    /// 0 disables quantization.
    pub quant_bits: u8,
    /// Anomaly z-score threshold; `None` disables the detector.
    pub detect_z: Option<f64>,
    pub pgd_train_steps: u32,
    /// Policies this one was derived from.
    #[serde(default)]
    pub parents: Vec<PolicyId>,
}

impl DefensePolicy {
    /// The all-off policy.
    pub fn identity(id: PolicyId) -> Self {
        Self {
            id,
            adv_ratio: 0.0,
            smooth_sigma: 0.0,
            votes: 1,
            quant_bits: 0,
            detect_z: None,
            pgd_train_steps: 0,
            parents: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.adv_ratio) {
            return Err(AedError::config("policy.adv_ratio", "must lie in [0, 1]"));
        }
        if !(self.smooth_sigma >= 0.0 && self.smooth_sigma.is_finite()) {
            return Err(AedError::config(
                "policy.smooth_sigma",
                "must be finite and nonnegative",
            ));
        }
        if self.votes == 0 {
            return Err(AedError::config("policy.votes", "must be positive"));
        }
        if self.quant_bits > 8 {
            return Err(AedError::config("policy.quant_bits", "must lie in 0..=8"));
        }
        if let Some(z) = self.detect_z {
            if z.is_nan() || z <= 0.0 {
                return Err(AedError::config("policy.detect_z", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Running per-dimension mean and std over trusted clean samples (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    pub count: u64,
}

impl FeatureStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let mut stats = Self::new(data.n_features);
        for i in 0..data.len() {
            stats.update(data.row(i));
        }
        stats
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn std(&self, dim: usize) -> f64 {
        if self.count == 0 {
            return STD_FLOOR;
        }
        (self.m2[dim] / self.count as f64).sqrt().max(STD_FLOOR)
    }

    pub fn z_score(&self, dim: usize, v: f64) -> f64 {
        (v - self.mean[dim]) / self.std(dim)
    }
}

/// Midpoint quantizer with `2^bits` levels over `[-QUANT_RANGE, QUANT_RANGE]`.
pub fn quantize(v: f64, bits: u8) -> f64 {
    if bits == 0 {
        return v;
    }
    let levels = (1u32 << bits) as f64;
    let width = 2.0 * QUANT_RANGE / levels;
    let clamped = v.clamp(-QUANT_RANGE, QUANT_RANGE);
    let bin = ((clamped + QUANT_RANGE) / width).floor().min(levels - 1.0);
    -QUANT_RANGE + (bin + 0.5) * width
}

/// Result of the sanitizing stage for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sanitized {
    pub x: Vec<f64>,
    pub flagged: bool,
    /// Largest `|z|` seen before clamping.
    pub max_abs_z: f64,
}

pub fn sanitize_input(policy: &DefensePolicy, x: &[f64], stats: &FeatureStats) -> Result<Sanitized> {
    let mut out = x.to_vec();
    let mut flagged = false;
    let mut max_abs_z = 0.0f64;
    if let Some(limit) = policy.detect_z {
        if stats.count == 0 {
            return Err(AedError::State("anomaly detector used before any clean sample".into()));
        }
        for (d, &v) in x.iter().enumerate() {
            max_abs_z = max_abs_z.max(stats.z_score(d, v).abs());
        }
        if max_abs_z > limit {
            flagged = true;
            for (d, v) in out.iter_mut().enumerate() {
                let s = stats.std(d);
                *v = v.clamp(stats.mean[d] - limit * s, stats.mean[d] + limit * s);
            }
        }
    }
    if policy.quant_bits > 0 {
        out.iter_mut().for_each(|v| *v = quantize(*v, policy.quant_bits));
    }
    Ok(Sanitized {
        x: out,
        flagged,
        max_abs_z,
    })
}

/// Most frequent label, lowest index on ties.
pub fn majority_vote(predictions: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &p in predictions {
        counts[p] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn smoothed_with<R: Rng>(
    policy: &DefensePolicy,
    model: &PredictorModel,
    x: &[f64],
    rng: &mut R,
    ws: &mut Workspace,
) -> usize {
    if policy.smooth_sigma == 0.0 {
        return model.predict_with(x, ws);
    }
    let mut noisy = vec![0.0; x.len()];
    let mut preds = Vec::with_capacity(policy.votes as usize);
    for _ in 0..policy.votes {
        for (n, &v) in noisy.iter_mut().zip(x) {
            let e: f64 = rng.sample(StandardNormal);
            *n = v + policy.smooth_sigma * e;
        }
        preds.push(model.predict_with(&noisy, ws));
    }
    majority_vote(&preds, model.output_dim())
}

/// Majority label over `votes` Gaussian-noised copies of `x`.
pub fn smoothed_predict<R: Rng>(
    policy: &DefensePolicy,
    model: &PredictorModel,
    x: &[f64],
    rng: &mut R,
) -> Result<usize> {
    if policy.votes == 0 {
        return Err(AedError::argument("smoothing needs at least one vote"));
    }
    if x.len() != model.input_dim() {
        return Err(AedError::argument("input dimension does not match the model"));
    }
    Ok(smoothed_with(policy, model, x, rng, &mut Workspace::default()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvEpochReport {
    pub mean_loss: f64,
    /// Number of training samples replaced by adversarial examples.
    pub perturbed: usize,
}

/// SGD epoch in which the first `round(adv_ratio * |batch|)` samples of every
/// minibatch are replaced by PGD examples against the current model. The
/// perturbation budget comes from `attack`; the iteration count from the policy.
pub fn adv_train_epoch<R: Rng>(
    model: &mut PredictorModel,
    data: &Dataset,
    policy: &DefensePolicy,
    attack: &AttackStrategy,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<AdvEpochReport> {
    policy.validate()?;
    if data.is_empty() {
        return Err(AedError::argument("cannot train on an empty dataset"));
    }
    let batches = shuffled_batches(data.len(), cfg.batch_size, rng);
    let pgd = AttackStrategy::pgd(
        attack.eps,
        attack.alpha.min(attack.eps),
        policy.pgd_train_steps,
        attack.random_start,
    );
    let mut perturber = Perturber::default();
    let mut total = 0.0;
    let mut perturbed = 0;
    for batch in &batches {
        let n_adv = (policy.adv_ratio * batch.len() as f64).round() as usize;
        let mut adv_rows = Vec::with_capacity(n_adv);
        if n_adv > 0 {
            // Random starts draw from a per-batch substream so the shuffle stream
            // is the same as plain SGD.
            let mut adv_rng = seed::rng(rng.next_u64());
            for &i in &batch[..n_adv] {
                adv_rows.push(perturber.perturb(model, data.row(i), data.labels[i], &pgd, &mut adv_rng));
            }
            perturbed += n_adv;
        }
        let xs: Vec<&[f64]> = adv_rows
            .iter()
            .map(|r| r.as_slice())
            .chain(batch[n_adv..].iter().map(|&i| data.row(i)))
            .collect();
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        let (loss, grads) = model.loss_and_grad(&xs, &labels)?;
        model.apply_gradient(&grads, cfg.learning_rate);
        total += loss;
    }
    Ok(AdvEpochReport {
        mean_loss: total / batches.len() as f64,
        perturbed,
    })
}

/// Outcome of running a dataset through the attacked, defended inference path.
#[derive(Debug, Clone, PartialEq)]
pub struct DefendedOutcome {
    pub accuracy: f64,
    pub flag_rate: f64,
    /// For each flagged sample, how far (in std units) its worst dimension sat
    /// past the detector threshold.
    pub flag_excess: Vec<f64>,
}

/// Scores one or more policies against the same attacked inputs. Perturbations
/// are computed once per sample against the undefended model (white-box on the
/// weights); each policy then sanitizes and votes on the result. Sample `i`
/// draws from substream `derive(seed, i)`.
pub fn evaluate_defended(
    model: &PredictorModel,
    data: &Dataset,
    policies: &[&DefensePolicy],
    attack: &AttackStrategy,
    stats: &FeatureStats,
    seed: u64,
) -> Result<Vec<DefendedOutcome>> {
    if data.is_empty() {
        return Err(AedError::argument("cannot evaluate on an empty dataset"));
    }
    let mut perturber = Perturber::default();
    let mut ws = Workspace::default();
    let mut hits = vec![0usize; policies.len()];
    let mut flags = vec![0usize; policies.len()];
    let mut excess: Vec<Vec<f64>> = vec![Vec::new(); policies.len()];
    for i in 0..data.len() {
        let label = data.labels[i];
        let mut rng = seed::rng(seed::derive(seed, i as u64));
        let adv = perturber.perturb(model, data.row(i), label, attack, &mut rng);
        for (k, policy) in policies.iter().enumerate() {
            let s = sanitize_input(policy, &adv, stats)?;
            if s.flagged {
                flags[k] += 1;
                excess[k].push(s.max_abs_z - policy.detect_z.unwrap_or(0.0));
            }
            let mut vote_rng = seed::rng(seed::derive(seed::derive(seed, i as u64), 1 + k as u64));
            if smoothed_with(policy, model, &s.x, &mut vote_rng, &mut ws) == label {
                hits[k] += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok(hits
        .into_iter()
        .zip(flags)
        .zip(excess)
        .map(|((h, f), e)| DefendedOutcome {
            accuracy: h as f64 / n,
            flag_rate: f as f64 / n,
            flag_excess: e,
        })
        .collect())
}
