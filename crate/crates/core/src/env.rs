//! Discrete-time multi-operator fleet simulation.
//!
//! At each rebalancing point the operators' truck moves are executed, then
//! demand is matched slot by slot until the next rebalancing point. Served
//! vehicles reappear at their destinations at the end of the slot; unserved
//! demand expires.
//!
//! Money is kept on a `2^-16` dollar grid so that the ledger identities
//! `net = trip - cost` and `reward + score = net` hold exactly in `f64`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apportion::largest_remainder;
use crate::domain::{DemandTensor, SatisfiedDemand, VehicleDistribution};
use crate::error::{Error, Result};
use crate::ingest::DemandDataset;
use crate::metrics::CityGoalSpec;

const MONEY_GRID: f64 = 65536.0;

/// Rounds a dollar amount onto the ledger grid.
pub fn money(x: f64) -> f64 {
    (x * MONEY_GRID).round() / MONEY_GRID
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub regions: usize,
    pub operators: usize,
    pub fleet_sizes: Vec<u64>,
    #[serde(default = "defaults::slots_per_day")]
    pub slots_per_day: usize,
    #[serde(default = "defaults::rebalance_every")]
    pub rebalance_every: usize,
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default = "defaults::unlock_fee")]
    pub unlock_fee: f64,
    #[serde(default = "defaults::per_minute_fee")]
    pub per_minute_fee: f64,
    /// Dollars per truck-kilometre.
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::truck_capacity")]
    pub truck_capacity: u64,
    pub distance_km: Vec<Vec<f64>>,
    pub goals: CityGoalSpec,
}

pub(crate) mod defaults {
    pub fn slots_per_day() -> usize {
        24
    }
    pub fn rebalance_every() -> usize {
        12
    }
    pub fn horizon() -> usize {
        3
    }
    pub fn unlock_fee() -> f64 {
        1.00
    }
    pub fn per_minute_fee() -> f64 {
        0.39
    }
    pub fn alpha() -> f64 {
        2.422
    }
    pub fn truck_capacity() -> u64 {
        20
    }
}

impl SimConfig {
    /// Config with default pricing and cadence.
    pub fn new(fleet_sizes: Vec<u64>, distance_km: Vec<Vec<f64>>, goals: CityGoalSpec) -> Self {
        Self {
            regions: distance_km.len(),
            operators: fleet_sizes.len(),
            fleet_sizes,
            slots_per_day: defaults::slots_per_day(),
            rebalance_every: defaults::rebalance_every(),
            horizon: defaults::horizon(),
            unlock_fee: defaults::unlock_fee(),
            per_minute_fee: defaults::per_minute_fee(),
            alpha: defaults::alpha(),
            truck_capacity: defaults::truck_capacity(),
            distance_km,
            goals,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: format!("sim.{field}"),
                reason,
            })
        };
        if self.regions == 0 {
            return bad("regions", "must be positive".into());
        }
        if self.fleet_sizes.len() != self.operators || self.operators == 0 {
            return bad(
                "fleet_sizes",
                format!("need one positive size per operator ({})", self.operators),
            );
        }
        if self.fleet_sizes.iter().any(|&f| f == 0) {
            return bad("fleet_sizes", "fleet sizes must be positive".into());
        }
        if self.slots_per_day == 0 || self.rebalance_every == 0 || self.horizon == 0 {
            return bad("rebalance_every", "slots_per_day, rebalance_every and horizon must be positive".into());
        }
        if self.truck_capacity == 0 {
            return bad("truck_capacity", "must be positive".into());
        }
        if self.distance_km.len() != self.regions || self.distance_km.iter().any(|r| r.len() != self.regions) {
            return bad("distance_km", format!("must be {0}x{0}", self.regions));
        }
        for i in 0..self.regions {
            if self.distance_km[i][i] != 0.0 {
                return bad("distance_km", format!("diagonal entry {i} must be zero"));
            }
            for j in 0..self.regions {
                let d = self.distance_km[i][j];
                if !(d.is_finite() && d >= 0.0) {
                    return bad("distance_km", format!("entry ({i},{j}) must be finite and non-negative"));
                }
            }
        }
        if self.unlock_fee < 0.0 || self.per_minute_fee < 0.0 || self.alpha < 0.0 {
            return bad("alpha", "prices must be non-negative".into());
        }
        self.goals.validate()
    }

    /// Revenue of one trip of the given mean duration.
    pub fn trip_price(&self, duration_s: f64) -> f64 {
        self.unlock_fee + self.per_minute_fee * duration_s / 60.0
    }

    pub fn check_dataset(&self, dataset: &DemandDataset) -> Result<()> {
        if dataset.regions != self.regions || dataset.num_operators() != self.operators {
            return Err(Error::Dimension(format!(
                "dataset has {} regions / {} operators, config {} / {}",
                dataset.regions,
                dataset.num_operators(),
                self.regions,
                self.operators
            )));
        }
        if dataset.slots_per_day != self.slots_per_day {
            return Err(Error::Dimension(format!(
                "dataset has {} slots per day, config {}",
                dataset.slots_per_day, self.slots_per_day
            )));
        }
        Ok(())
    }
}

/// Integer origin-destination moves of one operator, `moves[i][j]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RebalanceAction {
    pub moves: Vec<Vec<u64>>,
}

impl RebalanceAction {
    pub fn none(regions: usize) -> Self {
        Self {
            moves: vec![vec![0; regions]; regions],
        }
    }

    /// Builds an action from signed counts, rejecting negatives.
    pub fn from_signed(operator: usize, moves: &[Vec<i64>]) -> Result<Self> {
        let mut out = Vec::with_capacity(moves.len());
        for (i, row) in moves.iter().enumerate() {
            let mut r = Vec::with_capacity(row.len());
            for (j, &v) in row.iter().enumerate() {
                if v < 0 {
                    return Err(Error::InvalidAction {
                        operator,
                        reason: format!("negative move {v} from {i} to {j}"),
                    });
                }
                r.push(v as u64);
            }
            out.push(r);
        }
        Ok(Self { moves: out })
    }

    pub fn total_moved(&self) -> u64 {
        self.moves
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum::<u64>())
            .sum()
    }
}

/// Executes one operator's moves in place and returns truck-kilometres:
/// every off-diagonal arc uses `ceil(moved / capacity)` trucks over its
/// one-way distance. Diagonal entries are ignored.
pub fn apply_rebalance(
    operator: usize,
    supply: &mut [u64],
    action: &RebalanceAction,
    distance_km: &[Vec<f64>],
    truck_capacity: u64,
) -> Result<f64> {
    let n = supply.len();
    if action.moves.len() != n || action.moves.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidAction {
            operator,
            reason: format!("move matrix must be {n}x{n}"),
        });
    }
    for (i, row) in action.moves.iter().enumerate() {
        let out: u64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).sum();
        if out > supply[i] {
            return Err(Error::InfeasibleAction {
                operator,
                region: i,
                moves: out,
                supply: supply[i],
            });
        }
    }
    let mut km = 0.0;
    let mut arrivals = vec![0u64; n];
    for (i, row) in action.moves.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i == j || v == 0 {
                continue;
            }
            supply[i] -= v;
            arrivals[j] += v;
            km += distance_km[i][j] * v.div_ceil(truck_capacity) as f64;
        }
    }
    for (s, a) in supply.iter_mut().zip(arrivals) {
        *s += a;
    }
    Ok(km)
}

/// Outcome of matching one operator's demand in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatch {
    /// Served trips per origin.
    pub satisfied: Vec<u64>,
    /// Served trips per origin and destination.
    pub served: Vec<Vec<u64>>,
    pub revenue: f64,
}

/// Serves `min(origin demand, origin supply)` trips at every origin, splitting
/// them over destinations by largest remainder, and relocates the served
/// vehicles to their destinations.
pub fn match_operator(
    operator: usize,
    supply: &mut [u64],
    demand: &DemandTensor,
    dataset: &DemandDataset,
    config: &SimConfig,
) -> OperatorMatch {
    let n = supply.len();
    let mut satisfied = vec![0; n];
    let mut served = vec![vec![0; n]; n];
    let mut arrivals = vec![0u64; n];
    let mut revenue = 0.0;
    for i in 0..n {
        let row = demand.row(operator, i);
        let want: u64 = row.iter().map(|&v| v as u64).sum();
        let take = want.min(supply[i]);
        if take == 0 {
            continue;
        }
        let weights: Vec<u64> = row.iter().map(|&v| v as u64).collect();
        let split = largest_remainder(take, &weights);
        for (j, &k) in split.iter().enumerate() {
            if k == 0 {
                continue;
            }
            revenue += k as f64 * config.trip_price(dataset.mean_duration(operator, i, j));
            arrivals[j] += k;
        }
        supply[i] -= take;
        satisfied[i] = take;
        served[i] = split;
    }
    for (s, a) in supply.iter_mut().zip(arrivals) {
        *s += a;
    }
    OperatorMatch {
        satisfied,
        served,
        revenue,
    }
}

/// Per-slot observation of supply, demand and service, all `[m][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    /// Vehicles at the start of the slot.
    pub supply: Vec<Vec<u64>>,
    /// Origin demand.
    pub demand: Vec<Vec<u64>>,
    pub satisfied: SatisfiedDemand,
    pub revenue: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub start_slot: usize,
    pub slots: Vec<SlotRecord>,
    pub trip_revenue: Vec<f64>,
    pub reb_km: Vec<f64>,
    pub reb_cost: Vec<f64>,
    pub net_revenue: Vec<f64>,
    pub score: Vec<f64>,
    pub reward: Vec<f64>,
    /// No further rebalancing points remain.
    pub done: bool,
}

impl StepOutcome {
    /// Sets the regulator scores; `reward = net_revenue - score`.
    pub fn apply_scores(&mut self, scores: &[f64]) -> Result<()> {
        crate::error::ensure_len("scores vs operators", scores.len(), self.net_revenue.len())?;
        self.score = scores.iter().map(|&s| money(s)).collect();
        self.reward = self
            .net_revenue
            .iter()
            .zip(&self.score)
            .map(|(z, s)| z - s)
            .collect();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub distribution: VehicleDistribution,
    /// Next slot to simulate.
    pub slot: usize,
    pub seed: u64,
    pub cumulative_net_revenue: Vec<f64>,
    pub cumulative_reb_km: Vec<f64>,
}

impl SimState {
    pub fn day(&self, slots_per_day: usize) -> usize {
        self.slot / slots_per_day
    }
}

/// Frozen state tagged with the fingerprint of the environment it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    fingerprint: String,
    state: SimState,
}

impl Snapshot {
    pub fn state(&self) -> &SimState {
        &self.state
    }
}

/// A simulation episode over a demand dataset.
#[derive(Debug, Clone)]
pub struct Env {
    config: Arc<SimConfig>,
    dataset: Arc<DemandDataset>,
    fingerprint: String,
    state: SimState,
}

/// Initial fleet placement: each operator's fleet apportioned over regions by
/// its first-day origin demand (uniform when that demand is zero).
pub fn initial_distribution(config: &SimConfig, dataset: &DemandDataset) -> VehicleDistribution {
    let first_day = dataset.origin_totals_over(0..1.min(dataset.days));
    let counts = config
        .fleet_sizes
        .iter()
        .zip(&first_day)
        .map(|(&fleet, shares)| largest_remainder(fleet, shares))
        .collect();
    VehicleDistribution { counts, slot: 0 }
}

fn fingerprint(config: &SimConfig, dataset: &DemandDataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(dataset.num_slots().to_le_bytes());
    h.update(dataset.total_trips().to_le_bytes());
    h.update(dataset.start_date.to_string().as_bytes());
    for op in &dataset.operators {
        h.update(op.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

impl Env {
    pub fn reset(config: Arc<SimConfig>, dataset: Arc<DemandDataset>, seed: u64) -> Result<Self> {
        config.validate()?;
        config.check_dataset(&dataset)?;
        let state = SimState {
            distribution: initial_distribution(&config, &dataset),
            slot: 0,
            seed,
            cumulative_net_revenue: vec![0.0; config.operators],
            cumulative_reb_km: vec![0.0; config.operators],
        };
        Ok(Self {
            fingerprint: fingerprint(&config, &dataset),
            config,
            dataset,
            state,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn dataset(&self) -> &DemandDataset {
        &self.dataset
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn is_done(&self) -> bool {
        self.state.slot >= self.dataset.num_slots()
    }

    /// Number of rebalancing points in a full episode.
    pub fn intervals_per_episode(&self) -> usize {
        self.dataset.num_slots().div_ceil(self.config.rebalance_every)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            fingerprint: self.fingerprint.clone(),
            state: self.state.clone(),
        }
    }

    pub fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        if snapshot.fingerprint != self.fingerprint {
            return Err(Error::StaleSnapshot {
                expected: snapshot.fingerprint.clone(),
                found: self.fingerprint.clone(),
            });
        }
        self.state = snapshot.state.clone();
        Ok(())
    }

    /// Executes all operators' moves and returns truck-km per operator. On
    /// error the state is left untouched.
    pub fn apply_rebalance(&mut self, actions: &[RebalanceAction]) -> Result<Vec<f64>> {
        crate::error::ensure_len("actions vs operators", actions.len(), self.config.operators)?;
        let mut next = self.state.distribution.counts.clone();
        let mut km = Vec::with_capacity(actions.len());
        for (m, (row, action)) in next.iter_mut().zip(actions).enumerate() {
            km.push(apply_rebalance(
                m,
                row,
                action,
                &self.config.distance_km,
                self.config.truck_capacity,
            )?);
        }
        self.state.distribution.counts = next;
        Ok(km)
    }

    /// Matches the current slot's demand and advances one slot.
    pub fn match_slot(&mut self) -> SlotRecord {
        let slot = self.state.slot;
        let tensor = self.dataset.tensor(slot);
        let supply = self.state.distribution.counts.clone();
        let mut satisfied = Vec::with_capacity(self.config.operators);
        let mut revenue = Vec::with_capacity(self.config.operators);
        let mut demand = Vec::with_capacity(self.config.operators);
        for m in 0..self.config.operators {
            let res = match_operator(
                m,
                &mut self.state.distribution.counts[m],
                tensor,
                &self.dataset,
                &self.config,
            );
            satisfied.push(res.satisfied);
            revenue.push(res.revenue);
            demand.push(tensor.origin_totals(m));
        }
        self.state.slot += 1;
        self.state.distribution.slot = self.state.slot;
        SlotRecord {
            slot,
            supply,
            demand,
            satisfied: SatisfiedDemand { counts: satisfied },
            revenue,
        }
    }

    /// Rebalances, then simulates slots up to the next rebalancing point.
    /// Scores are zero and rewards equal net revenue until
    /// [`StepOutcome::apply_scores`] is called.
    pub fn advance(&mut self, actions: &[RebalanceAction]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::InvalidArgument("episode already finished".into()));
        }
        let start_slot = self.state.slot;
        let reb_km = self.apply_rebalance(actions)?;
        let end = (start_slot + self.config.rebalance_every).min(self.dataset.num_slots());
        let mut slots = Vec::with_capacity(end - start_slot);
        let mut trip = vec![0.0; self.config.operators];
        while self.state.slot < end {
            let rec = self.match_slot();
            for (t, r) in trip.iter_mut().zip(&rec.revenue) {
                *t += r;
            }
            slots.push(rec);
        }
        let trip_revenue: Vec<f64> = trip.into_iter().map(money).collect();
        let reb_cost: Vec<f64> = reb_km.iter().map(|k| money(self.config.alpha * k)).collect();
        let net_revenue: Vec<f64> = trip_revenue.iter().zip(&reb_cost).map(|(z, c)| z - c).collect();
        for m in 0..self.config.operators {
            self.state.cumulative_net_revenue[m] += net_revenue[m];
            self.state.cumulative_reb_km[m] += reb_km[m];
        }
        Ok(StepOutcome {
            start_slot,
            slots,
            reward: net_revenue.clone(),
            score: vec![0.0; self.config.operators],
            trip_revenue,
            reb_km,
            reb_cost,
            net_revenue,
            done: self.is_done(),
        })
    }

    /// [`Env::advance`] followed by [`StepOutcome::apply_scores`].
    pub fn step(&mut self, actions: &[RebalanceAction], scores: &[f64]) -> Result<StepOutcome> {
        crate::error::ensure_len("scores vs operators", scores.len(), self.config.operators)?;
        let mut out = self.advance(actions)?;
        out.apply_scores(scores)?;
        Ok(out)
    }
}

/// Writes one CSV row per (slot, operator). Interval-level quantities
/// (truck-km, score, reward) sit on the first slot of their interval.
pub fn write_trace<W: Write>(writer: W, outcomes: &[StepOutcome], header_comment: Option<&str>) -> Result<()> {
    let mut writer = writer;
    if let Some(c) = header_comment {
        writeln!(writer, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "slot", "operator", "vehicles", "demand", "satisfied", "revenue", "reb_km", "score", "reward",
    ])?;
    for out in outcomes {
        for (k, rec) in out.slots.iter().enumerate() {
            for m in 0..rec.supply.len() {
                let first = k == 0;
                w.write_record([
                    rec.slot.to_string(),
                    m.to_string(),
                    rec.supply[m].iter().sum::<u64>().to_string(),
                    rec.demand[m].iter().sum::<u64>().to_string(),
                    rec.satisfied.counts[m].iter().sum::<u64>().to_string(),
                    format!("{:.6}", rec.revenue[m]),
                    format!("{:.6}", if first { out.reb_km[m] } else { 0.0 }),
                    format!("{:.6}", if first { out.score[m] } else { 0.0 }),
                    format!("{:.6}", if first { out.reward[m] } else { 0.0 }),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn dataset(regions: usize, operators: usize, days: usize, fill: impl Fn(usize, &mut DemandTensor)) -> DemandDataset {
        let tensors = (0..days * 24)
            .map(|s| {
                let mut t = DemandTensor::zeros(operators, regions, s);
                fill(s, &mut t);
                t
            })
            .collect();
        DemandDataset {
            slots_per_day: 24,
            start_date: NaiveDate::from_ymd_opt(2022, 6, 1).unwrap(),
            days,
            regions,
            operators: (0..operators).map(|m| format!("op{m}")).collect(),
            tensors,
            mean_duration_s: vec![900.0; operators * regions * regions],
            skipped: 0,
        }
    }

    fn line_config(fleets: Vec<u64>, regions: usize) -> SimConfig {
        let d = (0..regions)
            .map(|i| (0..regions).map(|j| (i as f64 - j as f64).abs() * 3.0).collect())
            .collect();
        SimConfig::new(fleets, d, CityGoalSpec::new(0.9, -20.0).unwrap())
    }

    #[test]
    fn reset_apportions_by_first_day_demand() {
        let ds = dataset(3, 1, 1, |s, t| {
            if s == 8 {
                t.set(0, 0, 1, 5);
                t.set(0, 1, 2, 3);
                t.set(0, 2, 0, 2);
            }
        });
        let env = Env::reset(Arc::new(line_config(vec![10], 3)), Arc::new(ds), 1).unwrap();
        assert_eq!(env.state().distribution.counts, vec![vec![5, 3, 2]]);
        assert_eq!(env.state().slot, 0);
    }

    #[test]
    fn reset_without_demand_is_uniform() {
        let ds = dataset(3, 1, 1, |_, _| {});
        let env = Env::reset(Arc::new(line_config(vec![10], 3)), Arc::new(ds), 1).unwrap();
        assert_eq!(env.state().distribution.counts, vec![vec![4, 3, 3]]);
        let again = Env::reset(Arc::new(line_config(vec![10], 3)), env.dataset.clone(), 1).unwrap();
        assert_eq!(again.state(), env.state());
    }

    #[test]
    fn reset_rejects_dimension_mismatch() {
        let ds = dataset(3, 1, 1, |_, _| {});
        assert!(Env::reset(Arc::new(line_config(vec![10, 5], 3)), Arc::new(ds), 0).is_err());
    }

    #[test]
    fn truck_cost_rounds_up_trucks() {
        let dist = vec![vec![0.0, 3.0], vec![3.0, 0.0]];
        let mut supply = vec![30, 0];
        let action = RebalanceAction {
            moves: vec![vec![0, 25], vec![0, 0]],
        };
        let km = apply_rebalance(0, &mut supply, &action, &dist, 20).unwrap();
        assert_eq!(km, 6.0);
        assert!((money(km * 2.422) - 14.532).abs() < 1e-4);
        assert_eq!(supply, vec![5, 25]);
    }

    #[test]
    fn zero_and_diagonal_moves_are_free() {
        let dist = vec![vec![0.0, 3.0], vec![3.0, 0.0]];
        let mut supply = vec![7, 2];
        let km = apply_rebalance(0, &mut supply, &RebalanceAction::none(2), &dist, 20).unwrap();
        assert_eq!((km, supply.clone()), (0.0, vec![7, 2]));
        let diag = RebalanceAction {
            moves: vec![vec![5, 0], vec![0, 0]],
        };
        let km = apply_rebalance(0, &mut supply, &diag, &dist, 20).unwrap();
        assert_eq!((km, supply), (0.0, vec![7, 2]));
    }

    #[test]
    fn infeasible_and_negative_actions_rejected() {
        let dist = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let mut supply = vec![3, 0];
        let action = RebalanceAction {
            moves: vec![vec![0, 4], vec![0, 0]],
        };
        match apply_rebalance(2, &mut supply, &action, &dist, 20) {
            Err(Error::InfeasibleAction { operator: 2, region: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(supply, vec![3, 0]);
        assert!(RebalanceAction::from_signed(1, &[vec![0, -1], vec![0, 0]]).is_err());
    }

    #[test]
    fn matching_splits_served_by_largest_remainder() {
        let mut ds = dataset(3, 1, 1, |s, t| {
            if s == 0 {
                t.set(0, 0, 1, 6);
                t.set(0, 0, 2, 2);
            }
        });
        ds.mean_duration_s = vec![900.0; 9];
        let cfg = line_config(vec![5], 3);
        let mut supply = vec![5, 0, 0];
        let res = match_operator(0, &mut supply, ds.tensor(0), &ds, &cfg);
        assert_eq!(res.satisfied, vec![5, 0, 0]);
        assert_eq!(res.served[0], vec![0, 4, 1]);
        assert!((res.revenue - 34.25).abs() < 1e-9);
        assert_eq!(supply, vec![0, 4, 1]);
    }

    #[test]
    fn empty_demand_serves_nothing() {
        let ds = dataset(2, 1, 1, |_, _| {});
        let cfg = line_config(vec![5], 2);
        let mut supply = vec![3, 2];
        let res = match_operator(0, &mut supply, ds.tensor(0), &ds, &cfg);
        assert_eq!(res.revenue, 0.0);
        assert_eq!(supply, vec![3, 2]);
    }

    #[test]
    fn table_sample_trip_price() {
        let cfg = line_config(vec![1], 1);
        assert!((cfg.trip_price(1544.0) - 11.036).abs() < 1e-9);
    }

    #[test]
    fn reward_follows_score_sign() {
        let mut out = StepOutcome {
            start_slot: 0,
            slots: vec![],
            trip_revenue: vec![100.0],
            reb_km: vec![10.0],
            reb_cost: vec![money(24.22)],
            net_revenue: vec![100.0 - money(24.22)],
            score: vec![0.0],
            reward: vec![0.0],
            done: false,
        };
        out.apply_scores(&[5.0]).unwrap();
        assert!((out.reward[0] - 70.78).abs() < 1e-4);
        out.apply_scores(&[-5.0]).unwrap();
        assert!((out.reward[0] - 80.78).abs() < 1e-4);
        out.apply_scores(&[0.0]).unwrap();
        assert_eq!(out.reward[0], out.net_revenue[0]);
    }

    #[test]
    fn snapshot_round_trip_and_stale_token() {
        let ds = Arc::new(dataset(2, 1, 1, |s, t| t.set(0, 0, 1, (s % 3) as u32)));
        let cfg = Arc::new(line_config(vec![6], 2));
        let mut env = Env::reset(cfg.clone(), ds.clone(), 0).unwrap();
        let snap = env.snapshot();
        let a = env.advance(&[RebalanceAction::none(2)]).unwrap();
        assert_ne!(env.state(), snap.state());
        env.restore(&snap).unwrap();
        assert_eq!(env.state(), snap.state());
        let b = env.advance(&[RebalanceAction::none(2)]).unwrap();
        assert_eq!(a, b);

        let other = Env::reset(Arc::new(line_config(vec![7], 2)), ds, 0).unwrap();
        let mut env2 = env.clone();
        assert!(matches!(env2.restore(&other.snapshot()), Err(Error::StaleSnapshot { .. })));
    }

    #[test]
    fn episode_runs_to_completion() {
        let ds = Arc::new(dataset(2, 2, 2, |s, t| {
            t.set(0, 0, 1, (s % 4) as u32);
            t.set(1, 1, 0, (s % 3) as u32);
        }));
        let mut env = Env::reset(Arc::new(line_config(vec![6, 4], 2)), ds, 0).unwrap();
        assert_eq!(env.intervals_per_episode(), 4);
        let mut n = 0;
        while !env.is_done() {
            let out = env.step(&[RebalanceAction::none(2), RebalanceAction::none(2)], &[1.0, -1.0]).unwrap();
            assert_eq!(out.slots.len(), 12);
            for m in 0..2 {
                assert_eq!(out.reward[m] + out.score[m], out.net_revenue[m]);
            }
            n += 1;
        }
        assert_eq!(n, 4);
        assert!(env.advance(&[RebalanceAction::none(2), RebalanceAction::none(2)]).is_err());
        for m in 0..2 {
            assert_eq!(env.state().distribution.operator_total(m), [6, 4][m]);
        }
    }
}
