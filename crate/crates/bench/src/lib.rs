//! Shared fixtures for the kernel benchmarks.

use aedsim_core::channel::{generate_trace, make_dataset, Standardizer};
use aedsim_core::{seed, Dataset, EnvConfig, FeatureStats, PredictorModel, TrainConfig};

pub struct Fixture {
    pub env: EnvConfig,
    pub model: PredictorModel,
    pub data: Dataset,
    pub stats: FeatureStats,
}

/// Default-architecture model (untrained) and `n` standardized samples.
pub fn fixture(n: usize) -> Fixture {
    let env = EnvConfig::default();
    let trace = generate_trace(&env.with_len(n + env.window), seed::derive(1, seed::TRAIN_TRACE)).expect("valid env");
    let raw = make_dataset(&trace, env.window).expect("trace longer than window");
    let data = Standardizer::fit(&raw).expect("nonempty").apply(&raw);
    let cfg = TrainConfig::default();
    let model = PredictorModel::init(&cfg.dims(env.n_features(), env.n_ports), cfg.init_scale, 7).expect("valid dims");
    let stats = FeatureStats::from_dataset(&data);
    Fixture {
        env,
        model,
        data,
        stats,
    }
}
