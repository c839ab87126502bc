//! The adaptive defense loop: policy generation, fitness evaluation and the
//! coordinator state machine.

mod coordinator;
mod fitness;
mod generator;
mod pool;
mod priors;

pub use coordinator::{detect_attack, CoordinatorState, KpiRecord, Mode, Shadow, StepOutcome, Thresholds};
pub use fitness::{
    characterize_attack, fe_fit, fe_rank, percentile, Characterization, FitnessEvaluator, Surrogate, Validation,
    PRIOR_FITNESS, SURROGATE_FAMILY,
};
pub use generator::{PolicyGenerator, MUTATION_SCALE, REFINE_RESAMPLE_P, REFINE_SCALE, RESAMPLE_P};
pub use pool::{PolicyPool, PoolEntry};
pub use priors::{PriorBounds, N_KNOBS};
