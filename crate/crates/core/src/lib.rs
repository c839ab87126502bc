pub mod aed;
pub mod attacks;
pub mod channel;
pub mod defenses;
pub mod error;
pub mod harness;
pub mod predictor;
pub mod seed;

pub use aed::{
    detect_attack, fe_fit, fe_rank, CoordinatorState, FitnessEvaluator, KpiRecord, Mode, PolicyGenerator, PolicyPool,
    PriorBounds, Surrogate, Thresholds,
};
pub use attacks::{AttackKind, AttackStrategy, AttackerState};
pub use channel::{ChannelTrace, Dataset, EnvConfig};
pub use defenses::{DefensePolicy, FeatureStats, PolicyId};
pub use error::{AedError, Result};
pub use harness::{aed_run, parse_config, report, run_scenario, Experiment, ExperimentLog, RunConfig, Scenario};
pub use predictor::{PredictorModel, TrainConfig};
