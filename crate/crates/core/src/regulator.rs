//! City regulator: coalition values, exact Shapley attribution, the capped
//! score model and its zeroth-order training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::SlotRecord;
use crate::error::{Error, Result};
use crate::metrics::{
    dfd_equity, dfd_fairness, goal_distance, satisfaction_rate, score_fairness, usage_equity, CityGoalSpec,
    GoalDistance,
};
use crate::nn::{Adam, Mlp, Optimizer};
use crate::scalar::Scalar;

/// Largest operator count handled by exact enumeration.
pub const MAX_OPERATORS: usize = 12;

/// Which equity and fairness definitions the regulator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessMode {
    /// Demand-supply ratio equity and score-revenue ratio fairness.
    #[default]
    Standard,
    /// Equal regional satisfaction and equal absolute scores.
    Dfd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoalitionValue<T> {
    pub c_sat: T,
    pub c_equ: T,
}

fn members(mask: usize, operators: usize) -> impl Iterator<Item = usize> {
    (0..operators).filter(move |m| mask >> m & 1 == 1)
}

/// Goal achievement of the operators in `mask`. Demand is matched per
/// operator (users never switch), equity uses the coalition's pooled demand
/// and supply. The empty coalition is worth zero.
pub fn coalition_value<T: Scalar>(
    mask: usize,
    demand: &[Vec<u64>],
    supply: &[Vec<u64>],
    mode: FairnessMode,
) -> Result<CoalitionValue<T>> {
    crate::error::ensure_len("demand vs supply operators", demand.len(), supply.len())?;
    if mask == 0 {
        return Ok(CoalitionValue {
            c_sat: T::zero(),
            c_equ: T::zero(),
        });
    }
    let m_count = demand.len();
    if mask >> m_count != 0 {
        return Err(Error::InvalidArgument(format!("coalition {mask:#b} has unknown operators")));
    }
    let n = demand[0].len();
    let mut u = vec![0u64; n];
    let mut s = vec![0u64; n];
    let mut d = vec![0u64; n];
    for m in members(mask, m_count) {
        crate::error::ensure_len("demand regions", demand[m].len(), n)?;
        crate::error::ensure_len("supply regions", supply[m].len(), n)?;
        for i in 0..n {
            u[i] += demand[m][i];
            s[i] += supply[m][i];
            d[i] += demand[m][i].min(supply[m][i]);
        }
    }
    let conv = |v: &[u64]| v.iter().map(|&x| T::from_count(x)).collect::<Vec<T>>();
    let (u, s, d) = (conv(&u), conv(&s), conv(&d));
    let c_sat = satisfaction_rate(&d, &u)?;
    let c_equ = match mode {
        FairnessMode::Standard => usage_equity(&u, &s)?,
        FairnessMode::Dfd => dfd_equity(&d, &u)?,
    };
    Ok(CoalitionValue { c_sat, c_equ })
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Exact Shapley values of a game given by `values[mask]` over all `2^M`
/// coalitions, with bit `m` of the mask standing for operator `m`.
pub fn shapley<T: Scalar>(operators: usize, values: &[T]) -> Result<Vec<T>> {
    if operators > MAX_OPERATORS {
        return Err(Error::InvalidArgument(format!(
            "exact Shapley supports at most {MAX_OPERATORS} operators"
        )));
    }
    let full = 1usize << operators;
    if values.len() < full {
        return Err(Error::MissingCoalition(values.len()));
    }
    let denom = T::from_count(factorial(operators));
    let weights: Vec<T> = (0..operators)
        .map(|h| T::from_count(factorial(h) * factorial(operators - h - 1)) / denom.clone())
        .collect();
    let mut phi = vec![T::zero(); operators];
    for (m, p) in phi.iter_mut().enumerate() {
        let bit = 1 << m;
        for mask in (0..full).filter(|k| k & bit == 0) {
            let h = mask.count_ones() as usize;
            let gain = values[mask | bit].clone() - values[mask].clone();
            *p = p.clone() + weights[h].clone() * gain;
        }
    }
    Ok(phi)
}

/// Per-operator contributions to both city goals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub phi_sat: Vec<f64>,
    pub phi_equ: Vec<f64>,
}

/// Coalition values of every subset, averaged over the given slots.
pub fn interval_characteristic(slots: &[SlotRecord], mode: FairnessMode) -> Result<Vec<CoalitionValue<f64>>> {
    let first = slots.first().ok_or(Error::EmptySequence("interval slots"))?;
    let m = first.demand.len();
    let full = 1usize << m;
    let mut acc = vec![
        CoalitionValue {
            c_sat: 0.0,
            c_equ: 0.0
        };
        full
    ];
    for rec in slots {
        for (mask, a) in acc.iter_mut().enumerate() {
            let v: CoalitionValue<f64> = coalition_value(mask, &rec.demand, &rec.supply, mode)?;
            a.c_sat += v.c_sat;
            a.c_equ += v.c_equ;
        }
    }
    let k = slots.len() as f64;
    for a in &mut acc {
        a.c_sat /= k;
        a.c_equ /= k;
    }
    Ok(acc)
}

/// Shapley attribution of a characteristic given per coalition.
pub fn attribute(operators: usize, characteristic: &[CoalitionValue<f64>]) -> Result<ShapleyAttribution> {
    let sat: Vec<f64> = characteristic.iter().map(|v| v.c_sat).collect();
    let equ: Vec<f64> = characteristic.iter().map(|v| v.c_equ).collect();
    Ok(ShapleyAttribution {
        phi_sat: shapley(operators, &sat)?,
        phi_equ: shapley(operators, &equ)?,
    })
}

/// Fairness of a score assignment under the chosen definition.
pub fn fairness(scores: &[f64], net_revenue: &[f64], mode: FairnessMode) -> Result<f64> {
    Ok(match mode {
        FairnessMode::Standard => score_fairness(scores, net_revenue)?.0,
        FairnessMode::Dfd => dfd_fairness(scores).0,
    })
}

/// Score model `kappa * tanh(net(x)) * max(z_net, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub net: Mlp<f64>,
    pub kappa: f64,
}

pub fn score_input_dim(operators: usize) -> usize {
    2 + 3 * operators
}

impl ScoreModel {
    pub fn new(net: Mlp<f64>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::InvalidArgument(format!("kappa {kappa} outside (0, 1]")));
        }
        if net.input_dim() != score_input_dim(net.output_dim()) {
            return Err(Error::Dimension(format!(
                "score model with {} outputs needs {} inputs, has {}",
                net.output_dim(),
                score_input_dim(net.output_dim()),
                net.input_dim()
            )));
        }
        Ok(Self { net, kappa })
    }

    pub fn operators(&self) -> usize {
        self.net.output_dim()
    }

    /// `[g_sat, g_equ, phi_sat.., phi_equ.., z_net / mean z_net ..]`.
    pub fn features(g: &GoalDistance<f64>, phi: &ShapleyAttribution, z_net: &[f64]) -> Vec<f64> {
        let mean = z_net.iter().sum::<f64>() / z_net.len().max(1) as f64;
        let scale = mean.abs().max(1.0);
        let mut x = Vec::with_capacity(score_input_dim(z_net.len()));
        x.push(g.g_sat);
        x.push(g.g_equ);
        x.extend(&phi.phi_sat);
        x.extend(&phi.phi_equ);
        x.extend(z_net.iter().map(|z| z / scale));
        x
    }

    /// Per-operator scores; positive values are penalties.
    pub fn assign_scores(&self, g: &GoalDistance<f64>, phi: &ShapleyAttribution, z_net: &[f64]) -> Result<Vec<f64>> {
        let m = self.operators();
        for (what, len) in [("phi_sat", phi.phi_sat.len()), ("phi_equ", phi.phi_equ.len()), ("z_net", z_net.len())] {
            if len != m {
                return Err(Error::Dimension(format!("{what} has {len} entries, model expects {m}")));
            }
        }
        let out = self.net.forward(&Self::features(g, phi, z_net))?;
        Ok(out
            .iter()
            .zip(z_net)
            .map(|(o, z)| self.kappa * o.tanh() * z.max(0.0))
            .collect())
    }
}

/// Everything the regulator derives for one rebalancing interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalAssessment {
    pub c_sat: f64,
    pub c_equ: f64,
    pub goal: GoalDistance<f64>,
    pub attribution: ShapleyAttribution,
    pub scores: Vec<f64>,
    pub fairness: f64,
}

/// Measures an interval and, when a model is given, scores the operators.
pub fn assess_interval(
    slots: &[SlotRecord],
    net_revenue: &[f64],
    goals: &CityGoalSpec,
    model: Option<&ScoreModel>,
    mode: FairnessMode,
) -> Result<IntervalAssessment> {
    let m = net_revenue.len();
    let characteristic = interval_characteristic(slots, mode)?;
    let grand = characteristic[(1 << m) - 1];
    let attribution = attribute(m, &characteristic)?;
    let goal = goal_distance(grand.c_sat, grand.c_equ, goals);
    let scores = match model {
        Some(model) => model.assign_scores(&goal, &attribution, net_revenue)?,
        None => vec![0.0; m],
    };
    let fairness = fairness(&scores, net_revenue, mode)?;
    Ok(IntervalAssessment {
        c_sat: grand.c_sat,
        c_equ: grand.c_equ,
        goal,
        attribution,
        scores,
        fairness,
    })
}

/// `beta * mean(clipped goal distances) + (1 - beta) * mean(-E)`.
pub fn regulation_loss(goals: &[GoalDistance<f64>], fairness: &[f64], beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
    }
    if goals.is_empty() {
        return Err(Error::EmptySequence("goal distances"));
    }
    if fairness.is_empty() {
        return Err(Error::EmptySequence("fairness values"));
    }
    let goal_term = goals
        .iter()
        .map(|g| {
            let c = g.clipped();
            c.g_sat + c.g_equ
        })
        .sum::<f64>()
        / goals.len() as f64;
    let fair_term = fairness.iter().map(|e| -e).sum::<f64>() / fairness.len() as f64;
    Ok(beta * goal_term + (1.0 - beta) * fair_term)
}

/// Gain and perturbation sequences `a_k = a0/(k+1)^0.602`, `c_k = c0/(k+1)^0.101`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaSchedule {
    pub a0: f64,
    pub c0: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_alpha() -> f64 {
    0.602
}

fn default_gamma() -> f64 {
    0.101
}

impl Default for SpsaSchedule {
    fn default() -> Self {
        Self {
            a0: 0.05,
            c0: 0.1,
            alpha: default_alpha(),
            gamma: default_gamma(),
        }
    }
}

impl SpsaSchedule {
    pub fn a(&self, k: usize) -> f64 {
        self.a0 / ((k + 1) as f64).powf(self.alpha)
    }

    pub fn c(&self, k: usize) -> f64 {
        self.c0 / ((k + 1) as f64).powf(self.gamma)
    }
}

/// Result of one simultaneous-perturbation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpsaStep {
    pub loss_plus: f64,
    pub loss_minus: f64,
}

/// One two-sided simultaneous-perturbation step with a Rademacher direction.
/// The two loss evaluations run concurrently.
pub fn spsa_update<F>(params: &mut [f64], loss: F, a_k: f64, c_k: f64, seed: u64) -> Result<SpsaStep>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(a_k > 0.0 && a_k.is_finite()) || !(c_k > 0.0 && c_k.is_finite()) {
        return Err(Error::InvalidArgument(format!("spsa needs a_k, c_k > 0 (got {a_k}, {c_k})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta: Vec<f64> = (0..params.len())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let plus: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p + c_k * d).collect();
    let minus: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p - c_k * d).collect();
    let (lp, lm) = rayon::join(|| loss(&plus), || loss(&minus));
    let (lp, lm) = (lp?, lm?);
    if !lp.is_finite() || !lm.is_finite() {
        return Err(Error::NonFinite(format!("spsa losses {lp}, {lm}")));
    }
    let g = (lp - lm) / (2.0 * c_k);
    for (p, d) in params.iter_mut().zip(&delta) {
        // the inverse of a Rademacher entry is itself
        *p -= a_k * g * d;
    }
    Ok(SpsaStep {
        loss_plus: lp,
        loss_minus: lm,
    })
}

/// Default penalty rule used to initialise the score model before SPSA.
///
/// The penalty rate grows with how far the city misses its goals and with
/// the operator's share of the equity shortfall; operators that improve
/// equity receive incentives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulatoryPrior {
    pub gain: f64,
}

impl Default for RegulatoryPrior {
    fn default() -> Self {
        Self { gain: 1.5 }
    }
}

impl RegulatoryPrior {
    /// Target penalty rates in `(-1, 1)`, one per operator.
    pub fn rates(&self, g: &GoalDistance<f64>, phi: &ShapleyAttribution, goals: &CityGoalSpec) -> Vec<f64> {
        let m = phi.phi_equ.len();
        let c = g.clipped();
        let gap = c.g_sat / goals.q_sat.max(1e-6) + c.g_equ / goals.q_equ.abs().max(1e-6);
        let total: f64 = phi.phi_equ.iter().sum();
        phi.phi_equ
            .iter()
            .map(|&p| {
                let share = if total < -1e-9 { p / total } else { 1.0 / m as f64 };
                (self.gain * gap * share * m as f64).tanh() * 0.95
            })
            .collect()
    }
}

/// Fits the score model's pre-squash outputs to the prior on synthetic
/// interval summaries spanning met and missed goals.
pub fn warm_start(
    model: &mut ScoreModel,
    prior: &RegulatoryPrior,
    goals: &CityGoalSpec,
    samples: usize,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let m = model.operators();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(samples);
    for _ in 0..samples {
        let c_sat: f64 = rng.random_range(0.3..1.0);
        let c_equ: f64 = goals.q_equ * rng.random_range(0.0..3.0) - rng.random_range(0.0..1.0);
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(-0.2..1.0)).collect();
        let wsum: f64 = weights.iter().sum::<f64>().max(0.2);
        let sat_w: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
        let ssum: f64 = sat_w.iter().sum();
        let phi = ShapleyAttribution {
            phi_sat: sat_w.iter().map(|w| c_sat * w / ssum).collect(),
            phi_equ: weights.iter().map(|w| c_equ * w / wsum).collect(),
        };
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(0.3..1.7)).collect();
        let g = goal_distance(c_sat, c_equ, goals);
        let target: Vec<f64> = prior.rates(&g, &phi, goals).iter().map(|r| r.atanh()).collect();
        data.push((ScoreModel::features(&g, &phi, &z), target));
    }
    let mut opt = Adam::new(1e-2, model.net.num_params());
    let batch = 64.min(samples.max(1));
    let mut last = f64::INFINITY;
    for _ in 0..epochs {
        let mut epoch_loss = 0.0;
        for chunk in data.chunks(batch) {
            let mut grads = vec![0.0; model.net.num_params()];
            for (x, y) in chunk {
                let trace = model.net.forward_trace(x)?;
                let gout: Vec<f64> = trace
                    .output()
                    .iter()
                    .zip(y)
                    .map(|(o, t)| 2.0 * (o - t) / (chunk.len() * m) as f64)
                    .collect();
                epoch_loss += trace.output().iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
                model.net.backward_into(&trace, &gout, &mut grads)?;
            }
            opt.step(model.net.params_mut(), &grads);
        }
        last = epoch_loss / (samples * m).max(1) as f64;
    }
    if !last.is_finite() {
        return Err(Error::NonFinite("score model warm start".into()));
    }
    Ok(last)
}
