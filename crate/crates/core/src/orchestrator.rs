//! Alternating training loop: trajectory collection, operator agent updates
//! and the regulator's replay-based score model update, plus evaluation.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, RebalanceAction, SimConfig, Snapshot, StepOutcome};
use crate::error::{Error, Result};
use crate::ingest::{DemandDataset, HistoricalMeanPredictor};
use crate::metrics::CityGoalSpec;
use crate::nn::Mlp;
use crate::regulator::{
    assess_interval, coalition_value, fairness, regulation_loss, score_input_dim, spsa_update, warm_start,
    CoalitionValue, FairnessMode, IntervalAssessment, RegulatoryPrior, ScoreModel, SpsaSchedule, SpsaStep,
};
use crate::scheduler::{
    actor_action, build_observation, critic_input, decode_operator, perturb, sdsm_policy, sotp_policy,
    td3_target, update_actor, update_critic, Agent, AgentOptim, AgentShape, Transition,
};

/// Experiment variants. Only the first four train agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoRegulation,
    NoFasa,
    Dfd,
    Sdsm,
    Sotp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoRegulation,
        Variant::NoFasa,
        Variant::Dfd,
        Variant::Sdsm,
        Variant::Sotp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRegulation => "no-regulation",
            Variant::NoFasa => "no-fasa",
            Variant::Dfd => "dfd",
            Variant::Sdsm => "sdsm",
            Variant::Sotp => "sotp",
        }
    }

    /// Row label used in metrics tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "REALISM",
            Variant::NoRegulation => "REALISM w/o R",
            Variant::NoFasa => "REALISM w/o FASA",
            Variant::Dfd => "REALISM w DFD",
            Variant::Sdsm => "SDSM",
            Variant::Sotp => "SoTP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn learned(self) -> bool {
        matches!(self, Variant::Full | Variant::NoRegulation | Variant::NoFasa | Variant::Dfd)
    }

    pub fn regulated(self) -> bool {
        matches!(self, Variant::Full | Variant::NoFasa | Variant::Dfd)
    }

    pub fn fairness_mode(self) -> FairnessMode {
        if self == Variant::Dfd {
            FairnessMode::Dfd
        } else {
            FairnessMode::Standard
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_iter: usize,
    pub gamma: f64,
    pub tau: f64,
    pub sigma: f64,
    pub noise_clip: f64,
    pub minibatch: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub buffer_capacity: usize,
    /// Task-2 rounds per outer iteration.
    pub updates_per_iteration: usize,
    pub hidden: Vec<usize>,
    /// Multiplies rewards before they reach the critics.
    pub reward_scale: f64,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Iterations to run before convergence may stop training.
    pub min_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iter: 200,
            gamma: 0.99,
            tau: 0.01,
            sigma: 0.1,
            noise_clip: 0.2,
            minibatch: 32,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            buffer_capacity: 100_000,
            updates_per_iteration: 10,
            hidden: vec![64, 64],
            reward_scale: 1e-3,
            convergence_window: 10,
            convergence_tol: 0.01,
            min_iterations: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("train.{field}"),
                reason: reason.to_string(),
            })
        };
        if self.n_iter == 0 {
            return bad("n_iter", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must be in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must be in (0, 1]");
        }
        if !(self.sigma >= 0.0) {
            return bad("sigma", "must be non-negative");
        }
        if !(self.noise_clip > 0.0) {
            return bad("noise_clip", "must be positive");
        }
        if self.minibatch == 0 {
            return bad("minibatch", "must be at least 1");
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) {
            return bad("lr_actor", "learning rates must be non-negative");
        }
        if self.buffer_capacity < self.minibatch {
            return bad("buffer_capacity", "must hold at least one minibatch");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "layer sizes must be positive");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale", "must be positive");
        }
        if self.convergence_window == 0 || !(self.convergence_tol > 0.0) {
            return bad("convergence_window", "window and tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegulatorConfig {
    pub beta: f64,
    pub kappa: f64,
    pub hidden: Vec<usize>,
    pub spsa: SpsaSchedule,
    pub prior: RegulatoryPrior,
    pub warm_start_samples: usize,
    pub warm_start_epochs: usize,
    /// Equity goal used when regional satisfaction spread is the equity
    /// measure.
    pub dfd_q_equ: f64,
    /// Regions protected by the strict relocation baseline.
    pub priority_regions: Vec<usize>,
    pub priority_fraction: f64,
}

impl Default for RegulatorConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            kappa: 0.2,
            hidden: vec![16],
            spsa: SpsaSchedule::default(),
            prior: RegulatoryPrior::default(),
            warm_start_samples: 1024,
            warm_start_epochs: 150,
            dfd_q_equ: -0.1,
            priority_regions: vec![0],
            priority_fraction: 0.5,
        }
    }
}

impl RegulatorConfig {
    pub fn validate(&self, regions: usize) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("regulator.{field}"),
                reason: reason.to_string(),
            })
        };
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", "must be in [0, 1]");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa", "must be in (0, 1]");
        }
        if !(self.spsa.a0 > 0.0 && self.spsa.c0 > 0.0) {
            return bad("spsa", "a0 and c0 must be positive");
        }
        if self.dfd_q_equ > 0.0 {
            return bad("dfd_q_equ", "must be non-positive");
        }
        if self.priority_regions.is_empty() || self.priority_regions.iter().any(|&r| r >= regions) {
            return bad("priority_regions", "must be non-empty valid region ids");
        }
        if !(0.0..=1.0).contains(&self.priority_fraction) {
            return bad("priority_fraction", "must be in [0, 1]");
        }
        Ok(())
    }

    /// Effective loss weight for a variant.
    pub fn beta_for(&self, variant: Variant) -> f64 {
        if variant == Variant::NoFasa {
            1.0
        } else {
            self.beta
        }
    }

    /// Goals the regulator measures against under a variant.
    pub fn goals_for(&self, goals: &CityGoalSpec, variant: Variant) -> CityGoalSpec {
        match variant.fairness_mode() {
            FairnessMode::Standard => *goals,
            FairnessMode::Dfd => CityGoalSpec {
                q_sat: goals.q_sat,
                q_equ: self.dfd_q_equ,
            },
        }
    }
}

/// Bounded FIFO store of transitions with uniform minibatch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest item when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn get(&self, k: usize) -> Option<&T> {
        self.items.get(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `size` distinct items, or `None` when the buffer holds fewer.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Option<Vec<&T>> {
        if size > self.items.len() {
            return None;
        }
        Some(
            index::sample(rng, self.items.len(), size)
                .into_iter()
                .map(|k| &self.items[k])
                .collect(),
        )
    }
}

/// Mixes a base seed with a path of indices into an independent stream seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut x = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        x = x.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x94D0_49BB_1331_11EB);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Learned agents `[m][i]` and the regulator's score model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub agents: Vec<Vec<Agent<f64>>>,
    pub score_model: ScoreModel,
}

impl PolicySet {
    pub fn init(sim: &SimConfig, train: &TrainConfig, reg: &RegulatorConfig, seed: u64) -> Result<Self> {
        let shape = AgentShape {
            regions: sim.regions,
            horizon: sim.horizon,
            hidden: train.hidden.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let agents = (0..sim.operators)
            .map(|_| (0..sim.regions).map(|_| Agent::new(&shape, &mut rng)).collect())
            .collect();
        let mut sizes = vec![score_input_dim(sim.operators)];
        sizes.extend(&reg.hidden);
        sizes.push(sim.operators);
        let score_model = ScoreModel::new(Mlp::new(&sizes, &mut rng), reg.kappa)?;
        Ok(Self { agents, score_model })
    }

    pub fn is_finite(&self) -> bool {
        self.agents.iter().flatten().all(Agent::is_finite) && self.score_model.net.is_finite()
    }
}

/// Who decides the rebalancing moves.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Learned(&'a [Vec<Agent<f64>>]),
    /// Historical demand shares `[m][i]`.
    Sdsm(&'a [Vec<f64>]),
    Sotp { priority: &'a [usize], fraction: f64 },
    Idle,
}

/// Scoring and exploration settings of one episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions<'a> {
    pub score_model: Option<&'a ScoreModel>,
    pub mode: FairnessMode,
    pub goals: CityGoalSpec,
    /// Exploration noise scale and stream seed.
    pub noise: Option<(f64, u64)>,
    pub record_transitions: bool,
    pub reward_scale: f64,
}

/// One rebalancing interval of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub outcome: StepOutcome,
    /// City-wide satisfaction and demand-supply equity, slot means.
    pub city: CoalitionValue<f64>,
    pub assessment: IntervalAssessment,
}

#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub intervals: Vec<IntervalRecord>,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn net_revenue(&self) -> Vec<f64> {
        let m = self.intervals.first().map_or(0, |r| r.outcome.net_revenue.len());
        let mut out = vec![0.0; m];
        for r in &self.intervals {
            for (o, z) in out.iter_mut().zip(&r.outcome.net_revenue) {
                *o += z;
            }
        }
        out
    }

    pub fn mean_city(&self) -> CoalitionValue<f64> {
        let k = self.intervals.len().max(1) as f64;
        CoalitionValue {
            c_sat: self.intervals.iter().map(|r| r.city.c_sat).sum::<f64>() / k,
            c_equ: self.intervals.iter().map(|r| r.city.c_equ).sum::<f64>() / k,
        }
    }

    pub fn mean_fairness(&self) -> f64 {
        let k = self.intervals.len().max(1) as f64;
        self.intervals.iter().map(|r| r.assessment.fairness).sum::<f64>() / k
    }
}

fn observe(env: &Env, predictor: &HistoricalMeanPredictor) -> Vec<Vec<Vec<f64>>> {
    let cfg = env.config();
    let state = env.state();
    (0..cfg.operators)
        .map(|m| {
            let preds = predictor.predict(m, state.slot, cfg.horizon);
            let supply = &state.distribution.counts[m];
            (0..cfg.regions)
                .map(|i| build_observation(supply, &preds, i, cfg.fleet_sizes[m]))
                .collect()
        })
        .collect()
}

fn city_value(outcome: &StepOutcome) -> Result<CoalitionValue<f64>> {
    let k = outcome.slots.len().max(1) as f64;
    let mut acc = CoalitionValue { c_sat: 0.0, c_equ: 0.0 };
    for rec in &outcome.slots {
        let full = (1 << rec.demand.len()) - 1;
        let v: CoalitionValue<f64> = coalition_value(full, &rec.demand, &rec.supply, FairnessMode::Standard)?;
        acc.c_sat += v.c_sat;
        acc.c_equ += v.c_equ;
    }
    acc.c_sat /= k;
    acc.c_equ /= k;
    Ok(acc)
}

/// Runs the environment from its current state to the end of the episode.
pub fn run_episode(
    env: &mut Env,
    predictor: &HistoricalMeanPredictor,
    controller: Controller<'_>,
    opts: &EpisodeOptions<'_>,
) -> Result<Episode> {
    let mut rng = opts.noise.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut episode = Episode::default();
    let n = env.config().regions;
    let mut obs = match controller {
        Controller::Learned(_) => Some(observe(env, predictor)),
        _ => None,
    };
    while !env.is_done() {
        let supply = env.state().distribution.counts.clone();
        let mut taken: Option<Vec<Vec<Vec<f64>>>> = None;
        let actions: Vec<RebalanceAction> = match controller {
            Controller::Learned(agents) => {
                let o = obs.as_ref().expect("observations for learned agents");
                let mut joint = Vec::with_capacity(agents.len());
                for (m, row) in agents.iter().enumerate() {
                    let mut per_region = Vec::with_capacity(n);
                    for (i, agent) in row.iter().enumerate() {
                        let mut u = actor_action(&agent.actor, &o[m][i])?;
                        if let (Some((sigma, _)), Some(rng)) = (opts.noise, rng.as_mut()) {
                            perturb(&mut u, sigma, None, rng);
                        }
                        per_region.push(u);
                    }
                    joint.push(per_region);
                }
                let acts = joint.iter().zip(&supply).map(|(u, s)| decode_operator(u, s)).collect();
                taken = Some(joint);
                acts
            }
            Controller::Sdsm(shares) => supply
                .iter()
                .zip(shares)
                .map(|(s, sh)| sdsm_policy(s, sh))
                .collect::<Result<_>>()?,
            Controller::Sotp { priority, fraction } => supply
                .iter()
                .map(|s| sotp_policy(s, priority, fraction))
                .collect::<Result<_>>()?,
            Controller::Idle => vec![RebalanceAction::none(n); supply.len()],
        };
        let mut outcome = env.advance(&actions)?;
        let assessment = assess_interval(
            &outcome.slots,
            &outcome.net_revenue,
            &opts.goals,
            opts.score_model,
            opts.mode,
        )?;
        outcome.apply_scores(&assessment.scores)?;
        let city = city_value(&outcome)?;
        if let Some(o) = obs.take() {
            let next = observe(env, predictor);
            if opts.record_transitions {
                episode.transitions.push(Transition {
                    obs: o,
                    actions: taken.expect("learned actions"),
                    rewards: outcome.reward.iter().map(|r| r * opts.reward_scale).collect(),
                    next_obs: next.clone(),
                    terminal: outcome.done,
                });
            }
            obs = Some(next);
        }
        episode.intervals.push(IntervalRecord {
            outcome,
            city,
            assessment,
        });
    }
    Ok(episode)
}

/// Mean losses of one Task-2 round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_q: f64,
}

/// Online networks with their optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub agent: Agent<f64>,
    pub optim: AgentOptim<f64>,
}

pub fn learners(policies: &PolicySet, train: &TrainConfig) -> Vec<Vec<Learner>> {
    policies
        .agents
        .iter()
        .map(|row| {
            row.iter()
                .map(|a| Learner {
                    optim: AgentOptim::new(a, train.lr_actor, train.lr_critic),
                    agent: a.clone(),
                })
                .collect()
        })
        .collect()
}

/// One critic, actor and target update for every region agent of every
/// operator. Agents update in parallel, each with its own derived random
/// stream, so results do not depend on thread scheduling. Returns `None`
/// when the buffer cannot fill a minibatch.
pub fn update_operators(
    buffer: &ReplayBuffer<Transition>,
    learners: &mut [Vec<Learner>],
    train: &TrainConfig,
    seed: u64,
) -> Result<Option<UpdateStats>> {
    if buffer.len() < train.minibatch {
        log::warn!(
            "replay buffer holds {} transitions, fewer than one minibatch of {}; skipping update",
            buffer.len(),
            train.minibatch
        );
        return Ok(None);
    }
    let target_actors: Vec<Vec<Mlp<f64>>> = learners
        .iter()
        .map(|row| row.iter().map(|l| l.agent.target_actor.clone()).collect())
        .collect();
    let results: Vec<Result<(f64, f64)>> = learners
        .par_iter_mut()
        .enumerate()
        .flat_map_iter(|(m, row)| row.iter_mut().enumerate().map(move |(i, l)| (m, i, l)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(m, i, learner)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[m as u64, i as u64]));
            let batch = buffer.sample(&mut rng, train.minibatch).expect("buffer size checked");
            update_agent(learner, &target_actors[m], &batch, m, i, train, &mut rng)
        })
        .collect();
    let k = results.len() as f64;
    let mut stats = UpdateStats {
        critic_loss: 0.0,
        actor_q: 0.0,
    };
    for r in results {
        let (c, a) = r?;
        stats.critic_loss += c / k;
        stats.actor_q += a / k;
    }
    Ok(Some(stats))
}

fn update_agent(
    learner: &mut Learner,
    target_actors: &[Mlp<f64>],
    batch: &[&Transition],
    m: usize,
    i: usize,
    train: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let agent = &mut learner.agent;
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        let q_next = if t.terminal {
            0.0
        } else {
            let mut joint = Vec::with_capacity(target_actors.len());
            for (k, actor) in target_actors.iter().enumerate() {
                let mut u = actor_action(actor, &t.next_obs[m][k])?;
                perturb(&mut u, train.sigma, Some(train.noise_clip), rng);
                joint.push(u);
            }
            agent.target_critic.forward(&critic_input(&t.next_obs[m][i], &joint))?[0]
        };
        targets.push(td3_target(t.rewards[m], train.gamma, q_next, t.terminal)?);
        inputs.push(critic_input(&t.obs[m][i], &t.actions[m]));
    }
    let loss = update_critic(&mut agent.critic, &mut learner.optim.critic, &inputs, &targets)?;
    let samples: Vec<(&[f64], &[Vec<f64>])> = batch.iter().map(|t| (&t.obs[m][i][..], &t.actions[m][..])).collect();
    let q = update_actor(&mut agent.actor, &mut learner.optim.actor, &agent.critic, &samples, i)?;
    agent.soft_update(train.tau)?;
    Ok((loss, q))
}

/// Per-interval quantities of a noise-free replay that the score model
/// consumes. Operators' actions never depend on scores, so one replay serves
/// every candidate score model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    pub intervals: Vec<IntervalAssessment>,
    pub net_revenue: Vec<Vec<f64>>,
}

/// Restores `snapshot` and replays the episode with the given agents and no
/// exploration noise.
pub fn replay(
    env: &mut Env,
    snapshot: &Snapshot,
    predictor: &HistoricalMeanPredictor,
    agents: &[Vec<Agent<f64>>],
    goals: &CityGoalSpec,
    mode: FairnessMode,
) -> Result<ReplayTrace> {
    env.restore(snapshot)?;
    let opts = EpisodeOptions {
        score_model: None,
        mode,
        goals: *goals,
        noise: None,
        record_transitions: false,
        reward_scale: 1.0,
    };
    let ep = run_episode(env, predictor, Controller::Learned(agents), &opts)?;
    Ok(ReplayTrace {
        net_revenue: ep.intervals.iter().map(|r| r.outcome.net_revenue.clone()).collect(),
        intervals: ep.intervals.into_iter().map(|r| r.assessment).collect(),
    })
}

/// Regulation loss of a score model on a replay.
pub fn replay_loss(trace: &ReplayTrace, model: &ScoreModel, mode: FairnessMode, beta: f64) -> Result<f64> {
    let mut goals = Vec::with_capacity(trace.intervals.len());
    let mut fair = Vec::with_capacity(trace.intervals.len());
    for (a, z) in trace.intervals.iter().zip(&trace.net_revenue) {
        let scores = model.assign_scores(&a.goal, &a.attribution, z)?;
        goals.push(a.goal);
        fair.push(fairness(&scores, z, mode)?);
    }
    regulation_loss(&goals, &fair, beta)
}

/// Task 3: replay from the snapshot and take one SPSA step on the score
/// model. Returns the loss at the pre-step parameters and the step record.
#[allow(clippy::too_many_arguments)]
pub fn update_regulator(
    env: &mut Env,
    snapshot: &Snapshot,
    predictor: &HistoricalMeanPredictor,
    agents: &[Vec<Agent<f64>>],
    model: &mut ScoreModel,
    goals: &CityGoalSpec,
    mode: FairnessMode,
    beta: f64,
    a_k: f64,
    c_k: f64,
    seed: u64,
) -> Result<(f64, SpsaStep)> {
    let trace = replay(env, snapshot, predictor, agents, goals, mode)?;
    let loss_now = replay_loss(&trace, model, mode, beta)?;
    let sizes = model.net.sizes().to_vec();
    let kappa = model.kappa;
    let eval = |p: &[f64]| {
        let m = ScoreModel::new(Mlp::from_params(&sizes, p.to_vec())?, kappa)?;
        replay_loss(&trace, &m, mode, beta)
    };
    let step = spsa_update(model.net.params_mut(), eval, a_k, c_k, seed)?;
    Ok((loss_now, step))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub net_revenue: Vec<f64>,
    pub c_sat: f64,
    pub c_equ: f64,
    pub fairness_mean: f64,
    pub delta_loss: f64,
    pub critic_loss: f64,
    /// Seconds; kept out of the deterministic iteration table.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl IterationReport {
    pub fn total_net_revenue(&self) -> f64 {
        self.net_revenue.iter().sum()
    }
}

/// True when the latest total net revenue, satisfaction and equity each sit
/// within `tol` (relative) of their mean over the last `k` reports.
pub fn convergence_check(window: &[IterationReport], k: usize, tol: f64) -> bool {
    if k == 0 || window.len() < k {
        return false;
    }
    let tail = &window[window.len() - k..];
    let last = tail.last().expect("non-empty window");
    let stable = |f: &dyn Fn(&IterationReport) -> f64| {
        let mean = tail.iter().map(f).sum::<f64>() / k as f64;
        let x = f(last);
        if mean == 0.0 {
            x == 0.0
        } else {
            ((x - mean) / mean).abs() < tol
        }
    };
    stable(&|r| r.total_net_revenue()) && stable(&|r| r.c_sat) && stable(&|r| r.c_equ)
}

/// Everything needed to train one variant.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub sim: Arc<SimConfig>,
    pub data: Arc<DemandDataset>,
    pub predictor: Arc<HistoricalMeanPredictor>,
    pub train: TrainConfig,
    pub regulator: RegulatorConfig,
    pub variant: Variant,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<IterationReport>,
    pub final_policies: PolicySet,
    pub best_policies: PolicySet,
    pub best_iteration: usize,
    pub converged: bool,
}

fn goals_met(r: &IterationReport, goals: &CityGoalSpec) -> bool {
    r.c_sat >= goals.q_sat && r.c_equ >= goals.q_equ
}

/// Alternates trajectory collection, agent updates and score model updates
/// until convergence or the iteration cap.
pub fn train(setup: &TrainSetup) -> Result<TrainOutcome> {
    train_with(setup, |_| {})
}

/// [`train`] with a callback after every iteration.
pub fn train_with(setup: &TrainSetup, mut on_iteration: impl FnMut(&IterationReport)) -> Result<TrainOutcome> {
    let variant = setup.variant;
    if !variant.learned() {
        return Err(Error::Config {
            field: "variant".into(),
            reason: format!("{variant} is rule-based and has nothing to train"),
        });
    }
    setup.train.validate()?;
    setup.regulator.validate(setup.sim.regions)?;
    let train = &setup.train;
    let reg = &setup.regulator;
    let mode = variant.fairness_mode();
    let reg_goals = reg.goals_for(&setup.sim.goals, variant);
    let beta = reg.beta_for(variant);

    let mut policies = PolicySet::init(&setup.sim, train, reg, setup.seed)?;
    if variant.regulated() {
        let loss = warm_start(
            &mut policies.score_model,
            &reg.prior,
            &reg_goals,
            reg.warm_start_samples,
            reg.warm_start_epochs,
            derive_seed(setup.seed, &[1]),
        )?;
        log::info!("score model warm start loss {loss:.4}");
    }
    let mut learners = learners(&policies, train);
    let mut buffer = ReplayBuffer::new(train.buffer_capacity);
    let mut env = Env::reset(setup.sim.clone(), setup.data.clone(), setup.seed)?;
    let initial = env.snapshot();
    let mut reports: Vec<IterationReport> = Vec::new();
    let mut best: Option<(usize, f64, PolicySet)> = None;
    let mut converged = false;

    for n in 0..train.n_iter {
        let started = Instant::now();
        env.restore(&initial)?;
        let snapshot = env.snapshot();
        let agents: Vec<Vec<Agent<f64>>> = learners
            .iter()
            .map(|row| row.iter().map(|l| l.agent.clone()).collect())
            .collect();

        // Task 1
        let opts = EpisodeOptions {
            score_model: variant.regulated().then_some(&policies.score_model),
            mode,
            goals: reg_goals,
            noise: Some((train.sigma, derive_seed(setup.seed, &[2, n as u64]))),
            record_transitions: true,
            reward_scale: train.reward_scale,
        };
        let episode = run_episode(&mut env, &setup.predictor, Controller::Learned(&agents), &opts)?;
        for t in episode.transitions.iter().cloned() {
            buffer.push(t);
        }

        // Task 2
        let mut critic_loss = 0.0;
        let mut rounds = 0usize;
        for u in 0..train.updates_per_iteration {
            let seed = derive_seed(setup.seed, &[3, n as u64, u as u64]);
            if let Some(stats) = update_operators(&buffer, &mut learners, train, seed)? {
                critic_loss += stats.critic_loss;
                rounds += 1;
            }
        }
        if rounds > 0 {
            critic_loss /= rounds as f64;
        }
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at iteration {n}")));
        }
        policies.agents = learners
            .iter()
            .map(|row| row.iter().map(|l| l.agent.clone()).collect())
            .collect();

        // Task 3
        let mut delta_loss = 0.0;
        if variant.regulated() {
            let (loss, step) = update_regulator(
                &mut env,
                &snapshot,
                &setup.predictor,
                &policies.agents,
                &mut policies.score_model,
                &reg_goals,
                mode,
                beta,
                reg.spsa.a(n),
                reg.spsa.c(n),
                derive_seed(setup.seed, &[4, n as u64]),
            )?;
            log::debug!("iteration {n}: spsa losses {:.5} / {:.5}", step.loss_plus, step.loss_minus);
            delta_loss = loss;
        }
        if !policies.is_finite() {
            return Err(Error::NonFinite(format!("parameters at iteration {n}")));
        }

        let city = episode.mean_city();
        let report = IterationReport {
            iteration: n,
            net_revenue: episode.net_revenue(),
            c_sat: city.c_sat,
            c_equ: city.c_equ,
            fairness_mean: episode.mean_fairness(),
            delta_loss,
            critic_loss,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "iteration {n}: net {:.2}, c_sat {:.4}, c_equ {:.3}, delta loss {:.4}, critic loss {:.4}",
            report.total_net_revenue(),
            report.c_sat,
            report.c_equ,
            report.delta_loss,
            report.critic_loss
        );
        let revenue = report.total_net_revenue();
        if goals_met(&report, &setup.sim.goals) && best.as_ref().is_none_or(|(_, r, _)| revenue > *r) {
            best = Some((n, revenue, policies.clone()));
        }
        on_iteration(&report);
        reports.push(report);
        if reports.len() >= train.min_iterations
            && convergence_check(&reports, train.convergence_window, train.convergence_tol)
        {
            converged = true;
            break;
        }
    }
    let last = reports.len() - 1;
    let (best_iteration, best_policies) = match best {
        Some((n, _, p)) => (n, p),
        None => (last, policies.clone()),
    };
    Ok(TrainOutcome {
        reports,
        final_policies: policies,
        best_policies,
        best_iteration,
        converged,
    })
}

/// Table-style summary of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub net_revenue: Vec<f64>,
    /// Mean city satisfaction rate in percent.
    pub satisfaction_pct: f64,
    pub usage_equity: f64,
    pub scores: Vec<f64>,
    /// Population standard deviation over operators of total score divided
    /// by total net revenue.
    pub score_ratio_std: f64,
    pub fairness_mean: f64,
    pub reb_km: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub variant: Variant,
    pub episode: Episode,
    pub metrics: MetricsRow,
    pub slots_per_day: usize,
}

/// Everything an evaluation run needs besides the policies.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub sim: Arc<SimConfig>,
    pub data: Arc<DemandDataset>,
    pub predictor: Arc<HistoricalMeanPredictor>,
    pub regulator: RegulatorConfig,
    /// Historical origin-demand shares `[m][i]` for the static baseline.
    pub shares: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Noise-free rollout on held-out days.
pub fn evaluate(setup: &EvalSetup, policies: Option<&PolicySet>, variant: Variant) -> Result<Evaluation> {
    let controller = match variant {
        Variant::Sdsm => Controller::Sdsm(&setup.shares),
        Variant::Sotp => Controller::Sotp {
            priority: &setup.regulator.priority_regions,
            fraction: setup.regulator.priority_fraction,
        },
        _ => Controller::Learned(
            &policies
                .ok_or_else(|| Error::InvalidArgument(format!("variant {variant} needs trained policies")))?
                .agents,
        ),
    };
    let score_model = match (variant.regulated(), policies) {
        (true, Some(p)) => Some(&p.score_model),
        _ => None,
    };
    let opts = EpisodeOptions {
        score_model,
        mode: variant.fairness_mode(),
        goals: setup.regulator.goals_for(&setup.sim.goals, variant),
        noise: None,
        record_transitions: false,
        reward_scale: 1.0,
    };
    let mut env = Env::reset(setup.sim.clone(), setup.data.clone(), setup.seed)?;
    let episode = run_episode(&mut env, &setup.predictor, controller, &opts)?;
    let metrics = summarize(variant.label(), &episode);
    Ok(Evaluation {
        variant,
        episode,
        metrics,
        slots_per_day: setup.sim.slots_per_day,
    })
}

/// Aggregates an episode into a metrics row.
pub fn summarize(label: &str, episode: &Episode) -> MetricsRow {
    let m = episode.intervals.first().map_or(0, |r| r.outcome.net_revenue.len());
    let net = episode.net_revenue();
    let mut scores = vec![0.0; m];
    let mut km = vec![0.0; m];
    for r in &episode.intervals {
        for k in 0..m {
            scores[k] += r.outcome.score[k];
            km[k] += r.outcome.reb_km[k];
        }
    }
    let ratios: Vec<f64> = scores.iter().zip(&net).map(|(s, z)| s / z.max(1.0)).collect();
    let mean = ratios.iter().sum::<f64>() / m.max(1) as f64;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m.max(1) as f64;
    let city = episode.mean_city();
    MetricsRow {
        label: label.to_string(),
        net_revenue: net,
        satisfaction_pct: 100.0 * city.c_sat,
        usage_equity: city.c_equ,
        scores,
        score_ratio_std: var.sqrt(),
        fairness_mean: episode.mean_fairness(),
        reb_km: km,
    }
}
