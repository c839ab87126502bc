use std::collections::BTreeMap;

use super::config::{RunConfig, Scenario};
use super::log::{summarize, Event, EventKind, ExperimentLog, LogHeader, ARTIFACT, ARTIFACT_VERSION};
use crate::aed::{
    characterize_attack, fe_fit, fe_rank, Characterization, CoordinatorState, FitnessEvaluator, KpiRecord, Mode,
    PolicyGenerator, PolicyPool, PriorBounds, Thresholds, Validation,
};
use crate::attacks::{label_flip, replay, AttackKind, AttackStrategy, AttackerState};
use crate::channel::{generate_trace, make_dataset, Dataset, EnvConfig, Standardizer};
use crate::defenses::{adv_train_epoch, evaluate_defended, DefendedOutcome, DefensePolicy, FeatureStats, PolicyId};
use crate::error::{AedError, Result};
use crate::predictor::{sgd_epoch, PredictorModel};
use crate::seed;

/// Red-team PGD step size as a fraction of the physical budget.
const RED_TEAM_ALPHA_FRACTION: f64 = 0.125;
/// Iterations the red-team PGD starts with.
const RED_TEAM_STEPS: u32 = 4;
/// Adversarial-training PGD covers this multiple of eps over its iterations.
const TRAIN_PATH_FACTOR: f64 = 2.5;

/// Validation substreams within an epoch.
const SLOT_REFRESH: u64 = 0;
const SLOT_GENERATION: u64 = 1;
const SLOT_ENHANCE: u64 = 2;
const SLOT_REFINE: u64 = 16;

/// Bookkeeping of one no-attack generation, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub epoch: usize,
    pub generated: usize,
    /// Candidates sent to DT validation by the surrogate ranking.
    pub validated: usize,
    pub refinements: usize,
    pub best: Option<(PolicyId, f64)>,
}

/// State of the adaptive defense loop.
#[derive(Debug, Clone)]
pub struct AedLoop {
    pub priors: PriorBounds,
    pub thresholds: Thresholds,
    pub generator: PolicyGenerator,
    pub evaluator: FitnessEvaluator,
    pub pool: PolicyPool,
    pub coordinator: CoordinatorState,
    pub red_team: Vec<AttackerState>,
    /// Surrogate training pairs.
    pub history: Vec<(DefensePolicy, f64)>,
    pub disagreements: usize,
    pub first_validated: Option<usize>,
    pub last_generation: Option<GenerationReport>,
    pub last_characterization: Option<Characterization>,
    /// Epoch the current attack episode started.
    episode_start: Option<usize>,
    /// Per-case DT accuracies of the deployed policy from the latest refresh.
    deployed_cases: Vec<f64>,
}

/// Datasets shared by every epoch, all in z-score units.
struct World {
    train: Dataset,
    dt: Dataset,
    eval: Dataset,
    /// Evaluation inputs as the attacker presents them (differs for replay).
    eval_live: Dataset,
    stats: FeatureStats,
    majority: f64,
}

fn build_world(env: &EnvConfig, master: u64, attacker: Option<&AttackerState>, dt_samples: usize) -> Result<World> {
    let trace = |len: usize, stream: u64| generate_trace(&env.with_len(len), seed::derive(master, stream));
    let train_trace = trace(env.trace_len, seed::TRAIN_TRACE)?;
    let dt_trace = trace(env.dt_len, seed::DT_TRACE)?;
    let eval_trace = trace(env.eval_len, seed::EVAL_TRACE)?;
    let train_raw = make_dataset(&train_trace, env.window)?;
    let z = Standardizer::fit(&train_raw)?;
    let train = z.apply(&train_raw);
    let dt = z.apply(&make_dataset(&dt_trace, env.window)?).subsample(dt_samples);
    let eval = z.apply(&make_dataset(&eval_trace, env.window)?);
    let eval_live = match attacker.map(|a| &a.strategy) {
        Some(s) if s.kind == AttackKind::Replay => {
            let stale = z.apply(&make_dataset(&replay(&eval_trace, s.delay)?, env.window)?);
            Dataset::new(stale.n_features, stale.n_classes, stale.features, eval.labels.clone())?
        }
        _ => eval.clone(),
    };
    Ok(World {
        stats: FeatureStats::from_dataset(&train),
        majority: eval.majority_share(),
        train,
        dt,
        eval,
        eval_live,
    })
}

/// Runs a scenario one epoch at a time.
pub struct Experiment {
    cfg: RunConfig,
    world: World,
    model: PredictorModel,
    epoch: usize,
    attacker: Option<AttackerState>,
    aed: Option<AedLoop>,
    monitor: DefensePolicy,
    records: Vec<KpiRecord>,
    events: Vec<Event>,
    policies: BTreeMap<PolicyId, DefensePolicy>,
}

impl Experiment {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let mut cfg = cfg;
        cfg.materialize();
        cfg.validate()?;
        let master = cfg.master_seed;
        let attacker = match cfg.scenario {
            Scenario::Clean => None,
            _ => cfg.attacker.as_ref().map(|a| a.state()),
        };
        let world = build_world(&cfg.env, master, attacker.as_ref(), cfg.dt_samples)?;
        let dims = cfg.train.dims(cfg.env.n_features(), cfg.env.n_ports);
        let init_seed = seed::derive(seed::derive(master, seed::MODEL_INIT), cfg.train.seed);
        let model = PredictorModel::init(&dims, cfg.train.init_scale, init_seed)?;
        let thresholds = cfg.thresholds.clone().unwrap_or_default();
        let monitor = DefensePolicy {
            detect_z: Some(thresholds.monitor_z),
            ..DefensePolicy::identity(0)
        };
        let aed = match cfg.scenario {
            Scenario::Aed => Some(Self::new_loop(&cfg, attacker.as_ref())?),
            _ => None,
        };
        Ok(Self {
            cfg,
            world,
            model,
            epoch: 0,
            attacker,
            aed,
            monitor,
            records: Vec::new(),
            events: Vec::new(),
            policies: BTreeMap::new(),
        })
    }

    fn new_loop(cfg: &RunConfig, attacker: Option<&AttackerState>) -> Result<AedLoop> {
        let priors = cfg
            .priors
            .clone()
            .ok_or_else(|| AedError::config("priors", "required for AED"))?;
        let thresholds = cfg
            .thresholds
            .clone()
            .ok_or_else(|| AedError::config("thresholds", "required for AED"))?;
        let cap = priors.eps_cap;
        let step = attacker.map_or(cap * RED_TEAM_ALPHA_FRACTION, |a| a.escalation_step);
        let alpha = cap * RED_TEAM_ALPHA_FRACTION;
        let red = |s: AttackStrategy| AttackerState::new(s, thresholds.t_min, step, cap, priors.steps_cap);
        let red_team = vec![
            red(AttackStrategy::fgsm(cap / 2.0)),
            red(AttackStrategy::pgd(
                cap / 2.0,
                alpha.min(cap / 2.0),
                RED_TEAM_STEPS.min(priors.steps_cap),
                false,
            )),
        ];
        let initial = priors.center(0);
        Ok(AedLoop {
            generator: PolicyGenerator::new(1),
            evaluator: FitnessEvaluator::new(cap),
            pool: PolicyPool::new(cfg.pool_capacity)?,
            coordinator: CoordinatorState::new(initial, cfg.refine_budget),
            red_team,
            history: Vec::new(),
            disagreements: 0,
            first_validated: None,
            last_generation: None,
            last_characterization: None,
            episode_start: None,
            deployed_cases: Vec::new(),
            priors,
            thresholds,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn model(&self) -> &PredictorModel {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.max_epochs
    }

    pub fn records(&self) -> &[KpiRecord] {
        &self.records
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn attacker(&self) -> Option<&AttackerState> {
        self.attacker.as_ref()
    }

    pub fn aed(&self) -> Option<&AedLoop> {
        self.aed.as_ref()
    }

    pub fn majority_baseline(&self) -> f64 {
        self.world.majority
    }

    fn event(&mut self, kind: EventKind, policy_id: Option<PolicyId>, detail: impl Into<String>) {
        self.events.push(Event {
            epoch: self.epoch,
            kind,
            policy_id,
            detail: detail.into(),
        });
    }

    /// Runs one epoch. Returns `None` once `max_epochs` have run.
    pub fn step(&mut self) -> Result<Option<&KpiRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        self.epoch += 1;
        let e = self.epoch;
        self.train().map_err(|err| err.at(e, "train"))?;
        let (record, shadow_acc, live) = self.evaluate().map_err(|err| err.at(e, "evaluate"))?;
        self.evolve_attacker(&record).map_err(|err| err.at(e, "attacker"))?;
        if self.aed.is_some() {
            let record = self
                .coordinate(record, shadow_acc)
                .map_err(|err| err.at(e, "coordinate"))?;
            self.records.push(record);
            let mode = self.records.last().expect("just pushed").mode;
            match mode {
                Mode::Normal => self.generation().map_err(|err| err.at(e, "generation"))?,
                Mode::UnderAttack => self.attack_branch(live).map_err(|err| err.at(e, "attack branch"))?,
                Mode::Fallback => {}
            }
        } else {
            self.records.push(record);
        }
        Ok(self.records.last())
    }

    /// Runs to completion and assembles the log.
    pub fn run(mut self) -> Result<ExperimentLog> {
        while self.step()?.is_some() {}
        Ok(self.into_log())
    }

    pub fn into_log(self) -> ExperimentLog {
        let t_min = self
            .cfg
            .thresholds
            .as_ref()
            .map_or(Thresholds::default().t_min, |t| t.t_min);
        let window = self
            .cfg
            .thresholds
            .as_ref()
            .map_or(Thresholds::default().kpi_window, |t| t.kpi_window);
        let (first, calls) = self
            .aed
            .as_ref()
            .map_or((None, 0), |a| (a.first_validated, a.evaluator.validation_calls()));
        ExperimentLog {
            header: LogHeader {
                artifact: ARTIFACT.to_string(),
                artifact_version: ARTIFACT_VERSION.to_string(),
                master_seed: self.cfg.master_seed,
                majority_baseline: self.world.majority,
                config: self.cfg,
            },
            summary: summarize(&self.records, window, t_min, first, calls),
            records: self.records,
            events: self.events,
            policies: self.policies,
        }
    }

    fn epoch_seed(&self, stream: u64) -> u64 {
        seed::derive(seed::derive(self.cfg.master_seed, stream), self.epoch as u64)
    }

    fn train(&mut self) -> Result<()> {
        let mut rng = seed::rng(seed::derive(self.epoch_seed(seed::SHUFFLE), self.cfg.train.seed));
        let poisoned;
        let data = match self.attacker.as_ref().map(|a| &a.strategy) {
            Some(s) if s.kind == AttackKind::LabelFlip => {
                let mut flip_rng = seed::rng(self.epoch_seed(seed::LABEL_FLIP));
                poisoned = label_flip(&self.world.train, s.flip_fraction, self.cfg.env.n_ports, &mut flip_rng)?;
                &poisoned
            }
            _ => &self.world.train,
        };
        match &self.aed {
            None => {
                sgd_epoch(&mut self.model, data, &self.cfg.train, &mut rng)?;
            }
            Some(aed) => {
                let eps = aed.red_team.iter().map(|a| a.strategy.eps).fold(0.0, f64::max);
                let steps = aed.coordinator.deployed.pgd_train_steps.max(1);
                let alpha = (TRAIN_PATH_FACTOR * eps / steps as f64).min(eps);
                let attack = AttackStrategy::pgd(eps, alpha, 0, true);
                adv_train_epoch(
                    &mut self.model,
                    data,
                    &aed.coordinator.deployed,
                    &attack,
                    &self.cfg.train,
                    &mut rng,
                )?;
            }
        }
        Ok(())
    }

    /// Scores the deployed policy (and the shadow, if any) on the live stream.
    fn evaluate(&mut self) -> Result<(KpiRecord, Option<f64>, Option<DefendedOutcome>)> {
        let deployed = match &self.aed {
            Some(a) => a.coordinator.deployed.clone(),
            None => DefensePolicy::identity(0),
        };
        let shadow = self
            .aed
            .as_ref()
            .and_then(|a| a.coordinator.shadow.as_ref().map(|s| s.policy.clone()));
        self.policies.entry(deployed.id).or_insert_with(|| deployed.clone());
        if let Some(s) = &shadow {
            self.policies.entry(s.id).or_insert_with(|| s.clone());
        }
        let live_seed = self.epoch_seed(seed::LIVE_EVAL);
        let clean = evaluate_defended(
            &self.model,
            &self.world.eval,
            &[&deployed, &self.monitor],
            &AttackStrategy::none(),
            &self.world.stats,
            live_seed,
        )?;
        let mut flag_rate = clean[1].flag_rate;
        let mut attacked_acc = None;
        let mut shadow_acc = None;
        let mut live = None;
        if let Some(attacker) = &self.attacker {
            let mut pols = vec![&deployed, &self.monitor];
            if let Some(s) = &shadow {
                pols.push(s);
            }
            let out = evaluate_defended(
                &self.model,
                &self.world.eval_live,
                &pols,
                &attacker.strategy,
                &self.world.stats,
                seed::derive(live_seed, 1),
            )?;
            attacked_acc = Some(out[0].accuracy);
            flag_rate = out[1].flag_rate;
            shadow_acc = out.get(2).map(|o| o.accuracy);
            live = Some(out[1].clone());
        } else if let Some(shadow) = &shadow {
            let out = evaluate_defended(
                &self.model,
                &self.world.eval,
                &[shadow],
                &AttackStrategy::none(),
                &self.world.stats,
                live_seed,
            )?;
            shadow_acc = Some(out[0].accuracy);
        }
        let record = KpiRecord {
            epoch: self.epoch,
            mode: Mode::Normal,
            attacker_phase: self.attacker.as_ref().map_or(0, |a| a.phase),
            clean_acc: clean[0].accuracy,
            attacked_acc,
            detector_flag_rate: flag_rate,
            policy_id: deployed.id,
        };
        Ok((record, shadow_acc, live))
    }

    fn evolve_attacker(&mut self, record: &KpiRecord) -> Result<()> {
        let (Some(attacker), Some(observed)) = (self.attacker.as_mut(), record.attacked_acc) else {
            return Ok(());
        };
        if attacker.evolve(self.epoch, observed)? {
            let detail = format!("phase {} -> {}", attacker.phase, attacker.strategy.describe());
            self.event(EventKind::Escalation, None, detail);
        }
        Ok(())
    }

    fn validation_seed(&self, slot: u64) -> u64 {
        seed::derive(self.epoch_seed(seed::VALIDATION), slot)
    }

    fn validate(&mut self, candidates: &[DefensePolicy], slot: u64) -> Result<Validation> {
        let seed = self.validation_seed(slot);
        let aed = self.aed.as_mut().expect("AED scenario");
        let attacks: Vec<AttackStrategy> = aed.red_team.iter().map(|a| a.strategy.clone()).collect();
        let v = aed.evaluator.validate(
            candidates,
            &self.model,
            &self.world.dt,
            &attacks,
            &self.world.stats,
            seed,
        )?;
        let cap = aed.evaluator.eps_cap;
        for r in &v.rejected {
            self.event(
                EventKind::Warning,
                None,
                format!("rejected {} above eps cap {cap}", r.describe()),
            );
        }
        Ok(v)
    }

    /// Re-measures deployed and baseline fitness, then runs the transition table.
    fn coordinate(&mut self, record: KpiRecord, shadow_acc: Option<f64>) -> Result<KpiRecord> {
        let initialized = self.aed.as_ref().expect("AED").coordinator.is_initialized();
        if !initialized {
            return Ok(record);
        }
        let (deployed, baseline) = {
            let c = &self.aed.as_ref().expect("AED").coordinator;
            (c.deployed.clone(), c.baseline.as_ref().map(|b| b.0.clone()))
        };
        let mut todo = vec![deployed.clone()];
        if let Some(b) = baseline.as_ref().filter(|b| b.id != deployed.id) {
            todo.push(b.clone());
        }
        let v = self.validate(&todo, SLOT_REFRESH)?;
        let fit = |id: PolicyId| v.scores.iter().find(|s| s.0.id == id).map(|s| s.1);
        let deployed_fit = fit(deployed.id).expect("validated");
        let baseline_fit = baseline.as_ref().and_then(|b| fit(b.id));
        let cases = v
            .scores
            .iter()
            .position(|s| s.0.id == deployed.id)
            .map(|i| v.per_case[i].clone())
            .unwrap_or_default();

        let aed = self.aed.as_mut().expect("AED");
        aed.deployed_cases = cases;
        let c = &mut aed.coordinator;
        c.refresh_fitness(deployed_fit, baseline_fit);
        if let Some(acc) = shadow_acc {
            c.observe_shadow(acc);
        }
        let out = c.co_step(record, &aed.thresholds, &mut aed.pool)?;
        let record = c.kpi_history.last().expect("co_step appends").clone();

        if let Some(id) = out.promoted {
            self.event(
                EventKind::ShadowPromoted,
                Some(id),
                "shadow matched live accuracy over a full window",
            );
            self.event(EventKind::Deployment, Some(id), "phased deployment completed");
        }
        if let Some(id) = out.shadow_rejected {
            self.event(
                EventKind::ShadowRejected,
                Some(id),
                "shadow underperformed the deployed policy",
            );
        }
        if let Some(id) = out.baseline_saved {
            self.event(
                EventKind::BaselineSaved,
                Some(id),
                format!("stable configuration, fitness {deployed_fit}"),
            );
        }
        if out.changed_mode() {
            let from = out.from.expect("set by co_step");
            let to = out.to.expect("set by co_step");
            let why = if out.detected {
                "attack detected"
            } else {
                "threshold rule"
            };
            self.event(
                EventKind::ModeTransition,
                None,
                format!("{} -> {} ({why})", from.as_str(), to.as_str()),
            );
            let aed = self.aed.as_mut().expect("AED");
            match to {
                Mode::UnderAttack => aed.episode_start = Some(self.epoch),
                Mode::Normal if from == Mode::UnderAttack => {
                    let start = aed.episode_start.take().unwrap_or(self.epoch);
                    let ch = aed
                        .last_characterization
                        .as_ref()
                        .map_or("uncharacterized".to_string(), |c| {
                            format!("{:?} eps~{:?} flagged {}", c.kind, c.eps_estimate, c.flagged)
                        });
                    let low = aed
                        .coordinator
                        .kpi_history
                        .iter()
                        .filter(|r| r.epoch >= start)
                        .map(KpiRecord::observed)
                        .fold(f64::INFINITY, f64::min);
                    let detail = format!("episode epochs {start}..{}, worst accuracy {low}, {ch}", self.epoch);
                    self.event(EventKind::AttackTrace, None, detail);
                }
                _ => {}
            }
            if let Some(id) = out.emergency {
                self.event(EventKind::Deployment, Some(id), "emergency policy from pool");
            }
            if let Some(id) = out.reverted_to {
                self.event(EventKind::Deployment, Some(id), "fallback to baseline");
            }
        }
        Ok(record)
    }

    /// The no-attack branch: generate, rank, validate top-k, refine, deploy,
    /// then strengthen the red team against what qualified.
    fn generation(&mut self) -> Result<()> {
        let e = self.epoch;
        let mut rng = seed::rng(self.epoch_seed(seed::POLICY_GEN));
        let (candidates, ranked) = {
            let aed = self.aed.as_mut().expect("AED");
            let cands = aed.generator.generate(
                &aed.pool,
                &aed.priors,
                &mut rng,
                self.cfg.generation_size,
                self.cfg.diversity_fraction,
            )?;
            check_bounds(&aed.priors, &cands)?;
            let surrogate = fe_fit(&aed.history, &aed.priors);
            let ranked = fe_rank(&surrogate, &cands, self.cfg.k)?;
            (cands, ranked)
        };
        let v = self.validate(&ranked, SLOT_GENERATION)?;
        let t_min = self.aed.as_ref().expect("AED").thresholds.t_min;

        let mut scored = v.scores.clone();
        let mut best = v.best().cloned().expect("k >= 1");
        let rebuild = {
            let aed = self.aed.as_mut().expect("AED");
            if ranked[0].id != best.0.id {
                aed.disagreements += 1;
            } else {
                aed.disagreements = 0;
            }
            let rebuild = aed.disagreements >= self.cfg.staleness_limit;
            if rebuild {
                aed.history.clear();
                aed.disagreements = 0;
            }
            aed.history.extend(v.scores.iter().cloned());
            for (p, f) in &v.scores {
                aed.pool.insert(p.clone(), Some(*f), e)?;
            }
            rebuild
        };
        if rebuild {
            self.event(
                EventKind::SurrogateRebuild,
                None,
                format!("top-1 disagreed {} generations running", self.cfg.staleness_limit),
            );
        }

        let mut refinements = 0;
        while best.1 < t_min && refinements < self.cfg.refine_budget {
            let top = top_k(&scored, self.cfg.k);
            let refined = {
                let aed = self.aed.as_mut().expect("AED");
                let r = aed.generator.refine(&top, &aed.priors, &mut rng)?;
                check_bounds(&aed.priors, &r)?;
                r
            };
            let rv = self.validate(&refined, SLOT_REFINE + refinements as u64)?;
            refinements += 1;
            let aed = self.aed.as_mut().expect("AED");
            aed.history.extend(rv.scores.iter().cloned());
            for (p, f) in &rv.scores {
                aed.pool.insert(p.clone(), Some(*f), e)?;
            }
            if let Some(b) = rv.best().filter(|b| b.1 > best.1) {
                best = b.clone();
            }
            scored.extend(rv.scores);
            self.event(
                EventKind::Refinement,
                Some(best.0.id),
                format!("iteration {refinements}, best fitness {}", best.1),
            );
        }

        let (initialized, deployed_fit, deployed_id, has_shadow) = {
            let c = &self.aed.as_ref().expect("AED").coordinator;
            (
                c.is_initialized(),
                c.deployed_fitness,
                c.deployed.id,
                c.shadow.is_some(),
            )
        };
        if !initialized {
            let aed = self.aed.as_mut().expect("AED");
            if best.1 >= t_min {
                aed.coordinator.install_baseline(best.0.clone(), best.1);
                aed.first_validated = Some(e);
                self.event(
                    EventKind::FirstValidation,
                    Some(best.0.id),
                    format!("fitness {}", best.1),
                );
                self.event(EventKind::Deployment, Some(best.0.id), "validated baseline");
            } else {
                aed.coordinator.deploy(best.0.clone(), best.1);
                self.event(
                    EventKind::Deployment,
                    Some(best.0.id),
                    format!("unvalidated, fitness {}", best.1),
                );
            }
        } else if !has_shadow && best.0.id != deployed_id && best.1 > deployed_fit {
            self.aed
                .as_mut()
                .expect("AED")
                .coordinator
                .start_shadow(best.0.clone(), best.1);
            self.event(
                EventKind::ShadowStarted,
                Some(best.0.id),
                format!("fitness {} vs {deployed_fit}", best.1),
            );
        }

        let passing: Vec<(DefensePolicy, f64)> = scored.iter().filter(|s| s.1 >= t_min).cloned().collect();
        let qualified = top_k(&passing, self.cfg.k);
        let enhance_seed = self.validation_seed(SLOT_ENHANCE);
        let aed = self.aed.as_mut().expect("AED");
        let escalated = aed.evaluator.enhance_attacks(
            &mut aed.red_team,
            &qualified,
            &self.model,
            &self.world.dt,
            &self.world.stats,
            enhance_seed,
            e,
        )?;
        let notes: Vec<String> = escalated
            .iter()
            .zip(&aed.red_team)
            .filter(|(up, _)| **up)
            .map(|(_, a)| a.strategy.describe())
            .collect();
        aed.last_generation = Some(GenerationReport {
            epoch: e,
            generated: candidates.len(),
            validated: ranked.len(),
            refinements,
            best: Some((best.0.id, best.1)),
        });
        for n in notes {
            self.event(EventKind::RedTeamEscalation, None, n);
        }
        Ok(())
    }

    /// The attack branch: characterize, then refine the deployed policy
    /// against the updated red team while it validates below `t_min`.
    fn attack_branch(&mut self, live: Option<DefendedOutcome>) -> Result<()> {
        let observed = self.records.last().expect("pushed").observed();
        let t_min = self.aed.as_ref().expect("AED").thresholds.t_min;
        if let Some(live) = live {
            let aed = self.aed.as_mut().expect("AED");
            let red_acc: Vec<f64> = aed.deployed_cases.iter().skip(1).copied().collect();
            let ch = characterize_attack(&live, observed, &aed.red_team, &red_acc, &self.world.stats);
            if let Some(est) = ch.eps_estimate {
                for a in &mut aed.red_team {
                    a.strategy.eps = a.strategy.eps.max(est.min(a.eps_cap));
                }
            }
            let detail = format!(
                "{:?}, eps estimate {:?}, {} flagged",
                ch.kind, ch.eps_estimate, ch.flagged
            );
            aed.last_characterization = Some(ch);
            self.event(EventKind::AttackCharacterized, None, detail);
        }
        let needs_work = {
            let c = &self.aed.as_ref().expect("AED").coordinator;
            observed < t_min || c.deployed_fitness < t_min
        };
        if !needs_work {
            return Ok(());
        }
        let mut rng = seed::rng(self.epoch_seed(seed::POLICY_GEN));
        let mut iteration = 0u64;
        loop {
            let (top, left) = {
                let aed = self.aed.as_ref().expect("AED");
                let mut top: Vec<DefensePolicy> = vec![aed.coordinator.deployed.clone()];
                let mut pooled: Vec<(DefensePolicy, f64)> = aed
                    .pool
                    .scored()
                    .map(|e| (e.policy.clone(), e.fitness.unwrap_or(0.0)))
                    .collect();
                pooled.retain(|p| p.0.id != aed.coordinator.deployed.id);
                top.extend(top_k(&pooled, self.cfg.k.saturating_sub(1)));
                (top, aed.coordinator.refinements_left())
            };
            if left == 0 {
                break;
            }
            let refined = {
                let aed = self.aed.as_mut().expect("AED");
                aed.coordinator.record_refinement();
                let r = aed.generator.refine(&top, &aed.priors, &mut rng)?;
                check_bounds(&aed.priors, &r)?;
                r
            };
            let rv = self.validate(&refined, SLOT_REFINE + iteration)?;
            iteration += 1;
            let aed = self.aed.as_mut().expect("AED");
            aed.history.extend(rv.scores.iter().cloned());
            let best = rv.best().cloned().expect("nonempty refinement");
            if best.1 > aed.coordinator.deployed_fitness {
                aed.coordinator.deploy(best.0.clone(), best.1);
                self.event(
                    EventKind::Deployment,
                    Some(best.0.id),
                    format!("emergency refinement, fitness {}", best.1),
                );
            } else {
                self.event(
                    EventKind::Refinement,
                    None,
                    format!("emergency iteration {iteration}, no improvement"),
                );
            }
            if self.aed.as_ref().expect("AED").coordinator.deployed_fitness >= t_min {
                break;
            }
        }
        Ok(())
    }
}

fn check_bounds(priors: &PriorBounds, policies: &[DefensePolicy]) -> Result<()> {
    match policies.iter().find(|p| !priors.contains(p)) {
        Some(p) => Err(AedError::State(format!("policy {} left the prior bounds", p.id))),
        None => Ok(()),
    }
}

/// Best `k` by fitness, ties to the lower id.
fn top_k(scored: &[(DefensePolicy, f64)], k: usize) -> Vec<DefensePolicy> {
    let mut v: Vec<&(DefensePolicy, f64)> = scored.iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
    v.into_iter().take(k).map(|s| s.0.clone()).collect()
}

/// Runs the full adaptive defense scenario in memory.
pub fn aed_run(cfg: &RunConfig) -> Result<ExperimentLog> {
    if cfg.scenario != Scenario::Aed {
        return Err(AedError::config("scenario", "aed_run needs scenario = AED"));
    }
    Experiment::new(cfg.clone())?.run()
}
