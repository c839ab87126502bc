use serde::{Deserialize, Serialize};

use crate::defenses::{DefensePolicy, PolicyId};
use crate::error::{AedError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub policy: DefensePolicy,
    /// Worst-case DT accuracy, when measured.
    pub fitness: Option<f64>,
    pub generation: usize,
}

/// The defense set. Writes can be frozen while the system is under attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPool {
    entries: Vec<PoolEntry>,
    capacity: usize,
    frozen: bool,
    writes: u64,
}

/// Orders entries so that the "better" one compares greater: higher fitness
/// first, unscored last, ties to the lower id.
fn rank(e: &PoolEntry) -> (bool, f64, std::cmp::Reverse<PolicyId>) {
    (
        e.fitness.is_some(),
        e.fitness.unwrap_or(0.0),
        std::cmp::Reverse(e.policy.id),
    )
}

fn better(a: &PoolEntry, b: &PoolEntry) -> std::cmp::Ordering {
    let (ra, rb) = (rank(a), rank(b));
    ra.0.cmp(&rb.0).then(ra.1.total_cmp(&rb.1)).then(ra.2.cmp(&rb.2))
}

impl PolicyPool {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(AedError::config("pool_capacity", "must be positive"));
        }
        Ok(Self {
            entries: Vec::new(),
            capacity,
            frozen: false,
            writes: 0,
        })
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Number of accepted inserts over the pool's lifetime.
    pub fn writes(&self) -> u64 {
        self.writes
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn get(&self, id: PolicyId) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.policy.id == id)
    }

    /// Adds a policy. Returns `Ok(false)` without touching the pool while
    /// frozen. At capacity the worst entry (possibly the new one) is evicted.
    pub fn insert(&mut self, policy: DefensePolicy, fitness: Option<f64>, generation: usize) -> Result<bool> {
        if self.frozen {
            return Ok(false);
        }
        if let Some(f) = fitness {
            if !(0.0..=1.0).contains(&f) {
                return Err(AedError::argument(format!("fitness {f} outside [0, 1]")));
            }
        }
        if self.get(policy.id).is_some() {
            return Err(AedError::argument(format!("policy id {} already pooled", policy.id)));
        }
        self.entries.push(PoolEntry {
            policy,
            fitness,
            generation,
        });
        if self.entries.len() > self.capacity {
            let worst = self
                .entries
                .iter()
                .enumerate()
                .min_by(|a, b| better(a.1, b.1))
                .map(|(i, _)| i)
                .expect("pool is nonempty");
            self.entries.remove(worst);
        }
        self.writes += 1;
        Ok(true)
    }

    /// Highest-fitness scored entry, ties to the lower id.
    pub fn best(&self) -> Option<&PoolEntry> {
        self.entries
            .iter()
            .filter(|e| e.fitness.is_some())
            .max_by(|a, b| better(a, b))
    }

    pub fn scored(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter().filter(|e| e.fitness.is_some())
    }
}
