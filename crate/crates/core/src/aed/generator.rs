use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pool::{PolicyPool, PoolEntry};
use super::priors::PriorBounds;
use crate::defenses::{DefensePolicy, PolicyId};
use crate::error::{AedError, Result};

/// Mutation std as a fraction of each continuous knob's range.
pub const MUTATION_SCALE: f64 = 0.1;
/// Probability of redrawing a discrete knob during mutation.
pub const RESAMPLE_P: f64 = 0.2;
pub const REFINE_SCALE: f64 = MUTATION_SCALE / 2.0;
pub const REFINE_RESAMPLE_P: f64 = RESAMPLE_P / 2.0;

/// Evolutionary policy search inside the prior bounds. Owns the id counter so
/// every generated policy gets a fresh id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGenerator {
    next_id: PolicyId,
}

fn pick_weighted<R: Rng>(parents: &[&PoolEntry], rng: &mut R) -> usize {
    let w: Vec<f64> = parents.iter().map(|e| e.fitness.unwrap_or(0.0).max(1e-6)).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    parents.len() - 1
}

impl PolicyGenerator {
    pub fn new(first_id: PolicyId) -> Self {
        Self { next_id: first_id }
    }

    pub fn next_id(&self) -> PolicyId {
        self.next_id
    }

    fn fresh(&mut self) -> PolicyId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Produces `n` candidates. With at least two scored pool entries,
    /// `round((1 - diversity_fraction) * n)` of them alternate between
    /// mutation of a fitness-weighted parent and uniform crossover of two
    /// distinct parents; the rest are uniform prior samples.
    pub fn generate<R: Rng>(
        &mut self,
        pool: &PolicyPool,
        priors: &PriorBounds,
        rng: &mut R,
        n: usize,
        diversity_fraction: f64,
    ) -> Result<Vec<DefensePolicy>> {
        if n == 0 {
            return Err(AedError::argument("generation size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&diversity_fraction) {
            return Err(AedError::argument("diversity_fraction must lie in [0, 1]"));
        }
        let parents: Vec<&PoolEntry> = pool.scored().collect();
        let n_evolved = if parents.len() >= 2 {
            ((1.0 - diversity_fraction) * n as f64).round() as usize
        } else {
            0
        };
        let mut out = Vec::with_capacity(n);
        for j in 0..n_evolved {
            let id = self.fresh();
            let a = pick_weighted(&parents, rng);
            if j % 2 == 0 {
                out.push(priors.mutate(&parents[a].policy, id, MUTATION_SCALE, RESAMPLE_P, rng));
            } else {
                let rest: Vec<&PoolEntry> = parents
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != a)
                    .map(|(_, e)| *e)
                    .collect();
                let b = pick_weighted(&rest, rng);
                out.push(priors.crossover(&parents[a].policy, &rest[b].policy, id, rng));
            }
        }
        while out.len() < n {
            let id = self.fresh();
            out.push(priors.sample(id, rng));
        }
        Ok(out)
    }

    /// Local mutation of each input policy at half the generation std.
    pub fn refine<R: Rng>(
        &mut self,
        top: &[DefensePolicy],
        priors: &PriorBounds,
        rng: &mut R,
    ) -> Result<Vec<DefensePolicy>> {
        if top.is_empty() {
            return Err(AedError::argument("nothing to refine"));
        }
        Ok(top
            .iter()
            .map(|p| {
                let id = self.fresh();
                priors.mutate(p, id, REFINE_SCALE, REFINE_RESAMPLE_P, rng)
            })
            .collect())
    }
}
