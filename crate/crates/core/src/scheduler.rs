//! Per-region actor-critic rebalancing agents and the two rule-based
//! baselines.
//!
//! Each operator runs one agent per region. An actor maps its region's
//! observation to an action in `[-1, 1]^(N+1)`, read as scaled logits (one
//! per destination plus a "keep" logit). A critic scores the region
//! observation together with the joint actions of all regions of the same
//! operator; operators never see each other's actions.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::apportion::{largest_remainder, largest_remainder_real};
use crate::env::RebalanceAction;
use crate::error::{Error, Result};
use crate::ingest::PredictedSlot;
use crate::nn::{Adam, Mlp, Optimizer, Sgd};
use crate::scalar::Real;

/// Logit magnitude of a saturated action component.
pub const LOGIT_BOUND: f64 = 5.0;

pub fn observation_dim(regions: usize, horizon: usize) -> usize {
    1 + regions * horizon + regions + horizon
}

pub fn action_dim(regions: usize) -> usize {
    regions + 1
}

pub fn critic_input_dim(regions: usize, horizon: usize) -> usize {
    observation_dim(regions, horizon) + regions * action_dim(regions)
}

/// Packs the observation of region `region` for one operator:
/// `[S_i, U_i->j over h slots, S_j for all j, predicted totals over h slots]`,
/// every entry divided by the operator's fleet size.
pub fn build_observation<T: Real>(
    supply: &[u64],
    predictions: &[PredictedSlot],
    region: usize,
    fleet: u64,
) -> Vec<T> {
    let n = supply.len();
    let h = predictions.len();
    let scale = 1.0 / fleet.max(1) as f64;
    let mut out = Vec::with_capacity(observation_dim(n, h));
    out.push(T::lit(supply[region] as f64 * scale));
    for p in predictions {
        for j in 0..n {
            out.push(T::lit(p.get(region, j) * scale));
        }
    }
    out.extend(supply.iter().map(|&s| T::lit(s as f64 * scale)));
    out.extend(predictions.iter().map(|p| T::lit(p.total() * scale)));
    out
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Apportions `movable` vehicles over destinations by probability, never
/// to the origin itself.
pub fn apportion_moves(movable: u64, dest_probs: &[f64], origin: usize) -> Vec<u64> {
    let mut w = dest_probs.to_vec();
    if origin < w.len() {
        w[origin] = 0.0;
    }
    if movable == 0 || w.iter().all(|&p| p <= 0.0) {
        return vec![0; w.len()];
    }
    largest_remainder_real(movable, &w)
}

/// Decodes `N + 1` logits into integer moves out of region `origin`.
///
/// The last logit is the keep option. `round(supply * (1 - p_keep))` vehicles
/// move, split over the other regions by largest remainder.
pub fn decode_action<T: Real>(logits: &[T], supply: u64, origin: usize) -> Vec<u64> {
    let z: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
    let n = z.len() - 1;
    let p = softmax(&z);
    let movable = ((supply as f64) * (1.0 - p[n])).round().clamp(0.0, supply as f64) as u64;
    // destinations exclude the origin, so with a single region nothing moves
    if n <= 1 {
        return vec![0; n];
    }
    apportion_moves(movable, &p[..n], origin)
}

/// Decodes all regions' actions of one operator into a move matrix.
pub fn decode_operator<T: Real>(actions: &[Vec<T>], supply: &[u64]) -> RebalanceAction {
    let b = T::lit(LOGIT_BOUND);
    RebalanceAction {
        moves: actions
            .iter()
            .zip(supply)
            .enumerate()
            .map(|(i, (u, &s))| {
                let z: Vec<T> = u.iter().map(|&v| b * v).collect();
                decode_action(&z, s, i)
            })
            .collect(),
    }
}

/// Clips exploration noise to `[-c, c]`.
pub fn clip_noise(x: f64, c: f64) -> f64 {
    x.clamp(-c, c)
}

/// Adds (optionally clipped) Gaussian noise to an action, staying in
/// `[-1, 1]`.
pub fn perturb<T: Real, R: Rng + ?Sized>(action: &mut [T], sigma: f64, clip: Option<f64>, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    for u in action.iter_mut() {
        let mut e = normal.sample(rng);
        if let Some(c) = clip {
            e = clip_noise(e, c);
        }
        let v = (u.to_f64().unwrap_or(0.0) + e).clamp(-1.0, 1.0);
        *u = T::lit(v);
    }
}

/// Bootstrapped target `r + gamma * q_next`, or `r` at the terminal step.
pub fn td3_target<T: Real>(reward: T, gamma: T, q_next: T, terminal: bool) -> Result<T> {
    if !(gamma >= T::zero() && gamma < T::one()) {
        return Err(Error::InvalidArgument("gamma must be in [0, 1)".into()));
    }
    Ok(if terminal { reward } else { reward + gamma * q_next })
}

/// Actor output `tanh(net(obs))`.
pub fn actor_action<T: Real>(actor: &Mlp<T>, obs: &[T]) -> Result<Vec<T>> {
    Ok(actor.forward(obs)?.into_iter().map(|z| z.tanh()).collect())
}

/// Anything that can score a critic input and differentiate with respect to
/// it.
pub trait ActionValue<T> {
    fn value(&self, input: &[T]) -> Result<T>;
    /// Value and its gradient with respect to the input.
    fn value_grad(&self, input: &[T]) -> Result<(T, Vec<T>)>;
}

impl<T: Real> ActionValue<T> for Mlp<T> {
    fn value(&self, input: &[T]) -> Result<T> {
        Ok(self.forward(input)?[0])
    }

    fn value_grad(&self, input: &[T]) -> Result<(T, Vec<T>)> {
        let trace = self.forward_trace(input)?;
        let mut scratch = vec![T::zero(); self.num_params()];
        let gin = self.backward_into(&trace, &[T::one()], &mut scratch)?;
        Ok((trace.output()[0], gin))
    }
}

/// Concatenates a region observation with the operator's joint action.
pub fn critic_input<T: Real>(obs: &[T], joint: &[Vec<T>]) -> Vec<T> {
    let mut x = Vec::with_capacity(obs.len() + joint.iter().map(Vec::len).sum::<usize>());
    x.extend_from_slice(obs);
    for a in joint {
        x.extend_from_slice(a);
    }
    x
}

/// One descent step on `(1/X) sum (y - Q(x))^2`. Returns the pre-step loss.
pub fn update_critic<T: Real, O: Optimizer<T>>(
    critic: &mut Mlp<T>,
    opt: &mut O,
    inputs: &[Vec<T>],
    targets: &[T],
) -> Result<T> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    crate::error::ensure_len("critic inputs vs targets", inputs.len(), targets.len())?;
    let x = T::from_usize(inputs.len()).expect("batch size");
    let mut grads = vec![T::zero(); critic.num_params()];
    let mut loss = T::zero();
    for (inp, &y) in inputs.iter().zip(targets) {
        let trace = critic.forward_trace(inp)?;
        let err = trace.output()[0] - y;
        loss = loss + err * err;
        let g = T::lit(2.0) * err / x;
        critic.backward_into(&trace, &[g], &mut grads)?;
    }
    let loss = loss / x;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    opt.step(critic.params_mut(), &grads);
    Ok(loss)
}

/// One deterministic-policy-gradient step for the actor of region `slot`
/// within the joint action. Each sample is `(observation, joint action)`;
/// the actor's own entry is replaced by its current output. Returns the mean
/// critic value before the step.
pub fn update_actor<T: Real, C: ActionValue<T>, O: Optimizer<T>>(
    actor: &mut Mlp<T>,
    opt: &mut O,
    critic: &C,
    batch: &[(&[T], &[Vec<T>])],
    slot: usize,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let x = T::from_usize(batch.len()).expect("batch size");
    let mut grads = vec![T::zero(); actor.num_params()];
    let mut mean_q = T::zero();
    for (obs, joint) in batch {
        let trace = actor.forward_trace(obs)?;
        let own: Vec<T> = trace.output().iter().map(|&z| z.tanh()).collect();
        let offset = obs.len() + joint[..slot].iter().map(Vec::len).sum::<usize>();
        let mut joint = joint.to_vec();
        joint[slot] = own.clone();
        let (q, gin) = critic.value_grad(&critic_input(obs, &joint))?;
        mean_q = mean_q + q / x;
        // minimize -Q: d(-Q)/dz = -dQ/da * (1 - tanh^2) / X
        let grad_out: Vec<T> = own
            .iter()
            .enumerate()
            .map(|(k, &t)| -gin[offset + k] * (T::one() - t * t) / x)
            .collect();
        actor.backward_into(&trace, &grad_out, &mut grads)?;
    }
    if !mean_q.is_finite() {
        return Err(Error::NonFinite("actor objective".into()));
    }
    opt.step(actor.params_mut(), &grads);
    Ok(mean_q)
}

/// Hidden layer sizes and learning rates of the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentShape {
    pub regions: usize,
    pub horizon: usize,
    pub hidden: Vec<usize>,
}

impl AgentShape {
    pub fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![observation_dim(self.regions, self.horizon)];
        s.extend(&self.hidden);
        s.push(action_dim(self.regions));
        s
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![critic_input_dim(self.regions, self.horizon)];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

/// Online and target networks of one region agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub target_actor: Mlp<T>,
    pub target_critic: Mlp<T>,
}

impl<T: Real> Agent<T> {
    pub fn new<R: Rng + ?Sized>(shape: &AgentShape, rng: &mut R) -> Self {
        let actor = Mlp::new(&shape.actor_sizes(), rng);
        let critic = Mlp::new(&shape.critic_sizes(), rng);
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn zeros(shape: &AgentShape) -> Self {
        let actor = Mlp::zeros(&shape.actor_sizes());
        let critic = Mlp::zeros(&shape.critic_sizes());
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.target_actor.is_finite() && self.target_critic.is_finite()
    }

    pub fn soft_update(&mut self, tau: T) -> Result<()> {
        self.target_actor.soft_update_from(&self.actor, tau)?;
        self.target_critic.soft_update_from(&self.critic, tau)
    }
}

/// Optimizer state that travels with an agent during training.
#[derive(Debug, Clone)]
pub struct AgentOptim<T> {
    pub actor: Sgd<T>,
    pub critic: Adam<T>,
}

impl<T: Real> AgentOptim<T> {
    pub fn new(agent: &Agent<T>, lr_actor: T, lr_critic: T) -> Self {
        Self {
            actor: Sgd { lr: lr_actor },
            critic: Adam::new(lr_critic, agent.critic.num_params()),
        }
    }
}

/// One stored decision step of all operators. `obs` and `actions` are
/// indexed `[m][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<Vec<f64>>>,
    pub terminal: bool,
}

/// Normalized per-region historical origin-demand shares of one operator;
/// uniform when the history is empty.
pub fn demand_shares(origin_totals: &[u64]) -> Vec<f64> {
    let total: u64 = origin_totals.iter().sum();
    if total == 0 {
        return vec![1.0 / origin_totals.len() as f64; origin_totals.len()];
    }
    origin_totals.iter().map(|&u| u as f64 / total as f64).collect()
}

/// Moves turning `current` into `target` (same total) by matching surplus
/// regions to deficit regions greedily in region-id order.
pub fn transport_moves(current: &[u64], target: &[u64]) -> RebalanceAction {
    let n = current.len();
    let mut action = RebalanceAction::none(n);
    let mut surplus: Vec<(usize, u64)> = (0..n)
        .filter(|&i| current[i] > target[i])
        .map(|i| (i, current[i] - target[i]))
        .collect();
    let mut deficit: Vec<(usize, u64)> = (0..n)
        .filter(|&i| current[i] < target[i])
        .map(|i| (i, target[i] - current[i]))
        .collect();
    let (mut a, mut b) = (0, 0);
    while a < surplus.len() && b < deficit.len() {
        let k = surplus[a].1.min(deficit[b].1);
        action.moves[surplus[a].0][deficit[b].0] += k;
        surplus[a].1 -= k;
        deficit[b].1 -= k;
        if surplus[a].1 == 0 {
            a += 1;
        }
        if deficit[b].1 == 0 {
            b += 1;
        }
    }
    action
}

/// Static demand-supply matching: move the fleet to its historical demand
/// shares.
pub fn sdsm_policy(supply: &[u64], shares: &[f64]) -> Result<RebalanceAction> {
    crate::error::ensure_len("shares vs regions", shares.len(), supply.len())?;
    let sum: f64 = shares.iter().sum();
    if shares.iter().any(|&s| !(s >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("demand shares must be non-negative and sum to 1, got {sum}")));
    }
    let fleet: u64 = supply.iter().sum();
    let target = largest_remainder_real(fleet, shares);
    Ok(transport_moves(supply, &target))
}

/// Strict relocation: guarantee each priority region an even share of
/// `round(fraction * fleet)` vehicles, drawing from the fullest non-priority
/// regions first.
pub fn sotp_policy(supply: &[u64], priority: &[usize], fraction: f64) -> Result<RebalanceAction> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let n = supply.len();
    let mut prio: Vec<usize> = priority.to_vec();
    prio.sort_unstable();
    prio.dedup();
    if prio.is_empty() || prio.iter().any(|&p| p >= n) {
        return Err(Error::InvalidArgument("priority regions must be non-empty valid ids".into()));
    }
    let fleet: u64 = supply.iter().sum();
    let quota = (fraction * fleet as f64).round() as u64;
    let split = largest_remainder(quota, &vec![1; prio.len()]);
    let mut sources: Vec<usize> = (0..n).filter(|i| !prio.contains(i)).collect();
    sources.sort_by(|&a, &b| supply[b].cmp(&supply[a]).then(a.cmp(&b)));
    let mut left: Vec<u64> = supply.to_vec();
    let mut action = RebalanceAction::none(n);
    for (&p, &want) in prio.iter().zip(&split) {
        let mut need = want.saturating_sub(supply[p]);
        for &s in &sources {
            if need == 0 {
                break;
            }
            let k = need.min(left[s]);
            if k > 0 {
                action.moves[s][p] += k;
                left[s] -= k;
                need -= k;
            }
        }
    }
    Ok(action)
}
