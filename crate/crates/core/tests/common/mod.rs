#![allow(dead_code)]

use aedsim_core::attacks::AttackStrategy;
use aedsim_core::channel::{generate_trace, make_dataset, Dataset, EnvConfig, Standardizer};
use aedsim_core::defenses::{adv_train_epoch, evaluate_defended, DefensePolicy, FeatureStats};
use aedsim_core::predictor::{sgd_epoch, PredictorModel, TrainConfig};
use aedsim_core::{seed, RunConfig, Scenario};

/// A small world that runs a few epochs in well under a second.
pub fn tiny(scenario: Scenario, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::new(scenario);
    cfg.max_epochs = epochs;
    cfg.master_seed = 7;
    cfg.env.trace_len = 1_500;
    cfg.env.dt_len = 600;
    cfg.env.eval_len = 400;
    cfg.train.hidden = vec![16];
    cfg.dt_samples = 200;
    cfg.generation_size = 6;
    cfg.k = 2;
    cfg
}

/// Mean of attacked accuracy per attacker phase, computed straight from the rows.
pub fn phase_means(rows: &[(u32, f64)]) -> Vec<(u32, f64)> {
    let mut out: Vec<(u32, f64, usize)> = Vec::new();
    for &(phase, acc) in rows {
        match out.iter_mut().find(|(p, _, _)| *p == phase) {
            Some(slot) => {
                slot.1 += acc;
                slot.2 += 1;
            }
            None => out.push((phase, acc, 1)),
        }
    }
    out.sort_by_key(|s| s.0);
    out.into_iter().map(|(p, sum, n)| (p, sum / n as f64)).collect()
}

/// The default channel world: standardized training and evaluation sets drawn
/// from the same streams a scenario run with `seed` uses.
pub struct World {
    pub train: Dataset,
    pub eval: Dataset,
    pub stats: FeatureStats,
}

pub fn default_world(seed: u64) -> World {
    let env = EnvConfig::default();
    let train_trace = generate_trace(&env, seed::derive(seed, seed::TRAIN_TRACE)).unwrap();
    let eval_trace = generate_trace(&env.with_len(env.eval_len), seed::derive(seed, seed::EVAL_TRACE)).unwrap();
    let raw = make_dataset(&train_trace, env.window).unwrap();
    let z = Standardizer::fit(&raw).unwrap();
    let train = z.apply(&raw);
    let eval = z.apply(&make_dataset(&eval_trace, env.window).unwrap());
    let stats = FeatureStats::from_dataset(&train);
    World { train, eval, stats }
}

/// Trains the default architecture for `epochs`, adversarially when `hardening`
/// names a policy and its training attack. Seeding does not depend on hardening.
pub fn train_default(
    world: &World,
    epochs: usize,
    hardening: Option<(&DefensePolicy, &AttackStrategy)>,
    seed: u64,
) -> PredictorModel {
    let env = EnvConfig::default();
    let cfg = TrainConfig::default();
    let dims = cfg.dims(env.n_features(), env.n_ports);
    let mut model = PredictorModel::init(&dims, cfg.init_scale, seed::derive(seed, seed::MODEL_INIT)).unwrap();
    let mut rng = seed::rng(seed::derive(seed, seed::SHUFFLE));
    for _ in 0..epochs {
        match hardening {
            Some((policy, attack)) => {
                adv_train_epoch(&mut model, &world.train, policy, attack, &cfg, &mut rng).unwrap();
            }
            None => {
                sgd_epoch(&mut model, &world.train, &cfg, &mut rng).unwrap();
            }
        }
    }
    model
}

/// Accuracy of the undefended model on the evaluation set under `attack`.
pub fn attacked_accuracy(model: &PredictorModel, world: &World, attack: &AttackStrategy) -> f64 {
    let id = DefensePolicy::identity(0);
    evaluate_defended(model, &world.eval, &[&id], attack, &world.stats, 1).unwrap()[0].accuracy
}
