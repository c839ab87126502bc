use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::defenses::{DefensePolicy, PolicyId};
use crate::error::{AedError, Result};

/// Number of tunable knobs in a [`DefensePolicy`].
pub const N_KNOBS: usize = 6;

/// Bounded search space for defense policies plus the attacker's physical
/// budget. Continuous knobs are `[min, max]`, discrete knobs list the allowed
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorBounds {
    pub adv_ratio: [f64; 2],
    pub smooth_sigma: [f64; 2],
    pub votes: Vec<u32>,
    pub quant_bits: Vec<u8>,
    pub detect_z: [f64; 2],
    pub pgd_train_steps: Vec<u32>,
    pub eps_cap: f64,
    pub steps_cap: u32,
}

impl Default for PriorBounds {
    fn default() -> Self {
        Self {
            adv_ratio: [0.3, 0.8],
            smooth_sigma: [0.0, 0.3],
            votes: vec![1, 3, 5],
            quant_bits: vec![0, 4, 6, 8],
            detect_z: [3.0, 6.0],
            pgd_train_steps: vec![2, 3, 4, 5],
            eps_cap: 0.2,
            steps_cap: 10,
        }
    }
}

fn check_range(field: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
        return Err(AedError::config(
            field,
            "must be a finite [min, max] pair with min <= max",
        ));
    }
    if r[0] < lo || r[1] > hi {
        return Err(AedError::config(field, format!("must lie within [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_set<T: PartialOrd + Copy>(field: &str, set: &[T], ok: impl Fn(T) -> bool) -> Result<()> {
    if set.is_empty() {
        return Err(AedError::config(field, "allowed set must be nonempty"));
    }
    if !set.iter().all(|&v| ok(v)) {
        return Err(AedError::config(field, "contains an out-of-range value"));
    }
    Ok(())
}

fn set_span<T: Copy + Into<f64>>(set: &[T]) -> (f64, f64) {
    set.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        let v = v.into();
        (lo.min(v), hi.max(v))
    })
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

impl PriorBounds {
    pub fn validate(&self) -> Result<()> {
        check_range("priors.adv_ratio", self.adv_ratio, 0.0, 1.0)?;
        check_range("priors.smooth_sigma", self.smooth_sigma, 0.0, f64::MAX)?;
        check_range("priors.detect_z", self.detect_z, f64::MIN_POSITIVE, f64::MAX)?;
        check_set("priors.votes", &self.votes, |v| v >= 1)?;
        check_set("priors.quant_bits", &self.quant_bits, |b| b <= 8)?;
        check_set("priors.pgd_train_steps", &self.pgd_train_steps, |_| true)?;
        if !(self.eps_cap >= 0.0 && self.eps_cap.is_finite()) {
            return Err(AedError::config("priors.eps_cap", "must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &DefensePolicy) -> bool {
        let within = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        within(p.adv_ratio, self.adv_ratio)
            && within(p.smooth_sigma, self.smooth_sigma)
            && p.detect_z.is_some_and(|z| within(z, self.detect_z))
            && self.votes.contains(&p.votes)
            && self.quant_bits.contains(&p.quant_bits)
            && self.pgd_train_steps.contains(&p.pgd_train_steps)
    }

    /// Midpoint of every range, middle element of every allowed set.
    pub fn center(&self, id: PolicyId) -> DefensePolicy {
        let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
        DefensePolicy {
            id,
            adv_ratio: mid(self.adv_ratio),
            smooth_sigma: mid(self.smooth_sigma),
            votes: self.votes[self.votes.len() / 2],
            quant_bits: self.quant_bits[self.quant_bits.len() / 2],
            detect_z: Some(mid(self.detect_z)),
            pgd_train_steps: self.pgd_train_steps[self.pgd_train_steps.len() / 2],
            parents: Vec::new(),
        }
    }

    pub fn sample<R: Rng>(&self, id: PolicyId, rng: &mut R) -> DefensePolicy {
        let draw = |r: [f64; 2], rng: &mut R| r[0] + (r[1] - r[0]) * rng.random::<f64>();
        DefensePolicy {
            id,
            adv_ratio: draw(self.adv_ratio, rng),
            smooth_sigma: draw(self.smooth_sigma, rng),
            votes: *self.votes.choose(rng).expect("validated nonempty"),
            quant_bits: *self.quant_bits.choose(rng).expect("validated nonempty"),
            detect_z: Some(draw(self.detect_z, rng)),
            pgd_train_steps: *self.pgd_train_steps.choose(rng).expect("validated nonempty"),
            parents: Vec::new(),
        }
    }

    /// Knob vector scaled to `[0, 1]` per knob by the bounds.
    pub fn normalize(&self, p: &DefensePolicy) -> [f64; N_KNOBS] {
        let (vlo, vhi) = set_span(&self.votes);
        let (qlo, qhi) = set_span(&self.quant_bits);
        let (slo, shi) = set_span(&self.pgd_train_steps);
        let z = p.detect_z.unwrap_or(self.detect_z[1]);
        [
            unit(p.adv_ratio, self.adv_ratio[0], self.adv_ratio[1]),
            unit(p.smooth_sigma, self.smooth_sigma[0], self.smooth_sigma[1]),
            unit(p.votes as f64, vlo, vhi),
            unit(p.quant_bits as f64, qlo, qhi),
            unit(z, self.detect_z[0], self.detect_z[1]),
            unit(p.pgd_train_steps as f64, slo, shi),
        ]
    }

    /// Gaussian mutation. Continuous knobs move by `N(0, (scale * range)^2)`
    /// and are clipped to bounds; each discrete knob is redrawn from its set
    /// with probability `resample_p`. The number of rng draws does not depend
    /// on `scale` or `resample_p`.
    pub fn mutate<R: Rng>(
        &self,
        parent: &DefensePolicy,
        id: PolicyId,
        scale: f64,
        resample_p: f64,
        rng: &mut R,
    ) -> DefensePolicy {
        let cont = |v: f64, r: [f64; 2], rng: &mut R| {
            let z: f64 = rng.sample(StandardNormal);
            (v + scale * (r[1] - r[0]) * z).clamp(r[0], r[1])
        };
        fn disc<T: Copy, R: Rng>(v: T, set: &[T], p: f64, rng: &mut R) -> T {
            let u: f64 = rng.random();
            let pick = set[rng.random_range(0..set.len())];
            if u < p {
                pick
            } else {
                v
            }
        }
        let adv_ratio = cont(parent.adv_ratio, self.adv_ratio, rng);
        let smooth_sigma = cont(parent.smooth_sigma, self.smooth_sigma, rng);
        let votes = disc(parent.votes, &self.votes, resample_p, rng);
        let quant_bits = disc(parent.quant_bits, &self.quant_bits, resample_p, rng);
        let z = parent.detect_z.unwrap_or(self.detect_z[1]);
        let detect_z = Some(cont(z, self.detect_z, rng));
        let pgd_train_steps = disc(parent.pgd_train_steps, &self.pgd_train_steps, resample_p, rng);
        DefensePolicy {
            id,
            adv_ratio,
            smooth_sigma,
            votes,
            quant_bits,
            detect_z,
            pgd_train_steps,
            parents: vec![parent.id],
        }
    }

    /// Uniform crossover: each knob comes from either parent with equal odds.
    pub fn crossover<R: Rng>(&self, a: &DefensePolicy, b: &DefensePolicy, id: PolicyId, rng: &mut R) -> DefensePolicy {
        let mut pick = || rng.random::<bool>();
        DefensePolicy {
            id,
            adv_ratio: if pick() { a.adv_ratio } else { b.adv_ratio },
            smooth_sigma: if pick() { a.smooth_sigma } else { b.smooth_sigma },
            votes: if pick() { a.votes } else { b.votes },
            quant_bits: if pick() { a.quant_bits } else { b.quant_bits },
            detect_z: if pick() { a.detect_z } else { b.detect_z },
            pgd_train_steps: if pick() { a.pgd_train_steps } else { b.pgd_train_steps },
            parents: vec![a.id, b.id],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_validate_and_center_is_inside() {
        let p = PriorBounds::default();
        p.validate().unwrap();
        assert!(p.contains(&p.center(0)));
    }

    #[test]
    fn invalid_bounds_name_the_field() {
        let p = PriorBounds {
            adv_ratio: [0.9, 0.1],
            ..PriorBounds::default()
        };
        assert!(p.validate().unwrap_err().to_string().contains("priors.adv_ratio"));
        let mut p = PriorBounds::default();
        p.votes.clear();
        assert!(p.validate().unwrap_err().to_string().contains("priors.votes"));
    }

    #[test]
    fn samples_and_mutants_stay_in_bounds() {
        let p = PriorBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..500 {
            let s = p.sample(i, &mut rng);
            assert!(p.contains(&s));
            let m = p.mutate(&s, i + 1000, 3.0, 0.5, &mut rng);
            assert!(p.contains(&m));
        }
    }

    #[test]
    fn normalize_maps_corners_to_unit_cube() {
        let p = PriorBounds::default();
        let mut lo = p.center(0);
        lo.adv_ratio = 0.3;
        lo.votes = 1;
        let v = p.normalize(&lo);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], 0.0);
        lo.adv_ratio = 0.8;
        lo.votes = 5;
        let v = p.normalize(&lo);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], 1.0);
    }
}
