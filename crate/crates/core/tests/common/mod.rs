#![allow(dead_code)]

use fleetreg_core::env::RebalanceAction;
use fleetreg_core::ingest::synth_demand;
use fleetreg_core::{CityGoalSpec, DemandDataset, SimConfig, SynthConfig};
use rand::Rng;

/// Uniform rates over a small city with a flat daily profile.
pub fn small_dataset(regions: usize, operators: usize, days: usize, rate: f64, seed: u64) -> DemandDataset {
    let spec = SynthConfig {
        regions,
        operators,
        days,
        slots_per_day: 24,
        rates: vec![vec![vec![rate; regions]; regions]; operators],
        profile: vec![1.0; 24],
        durations_s: (0..regions)
            .map(|i| (0..regions).map(|j| 300.0 + 120.0 * i.abs_diff(j) as f64).collect())
            .collect(),
        operator_labels: Vec::new(),
    };
    synth_demand(&spec, seed).expect("valid synthetic spec")
}

pub fn small_sim(regions: usize, fleets: Vec<u64>, rebalance_every: usize) -> SimConfig {
    let distance_km = (0..regions)
        .map(|i| (0..regions).map(|j| 1.5 * i.abs_diff(j) as f64).collect())
        .collect();
    let mut sim = SimConfig::new(fleets, distance_km, CityGoalSpec { q_sat: 0.8, q_equ: -5.0 });
    sim.rebalance_every = rebalance_every;
    sim
}

/// Random moves that never exceed the vehicles present at each origin.
pub fn random_feasible<R: Rng>(rng: &mut R, supply: &[u64]) -> RebalanceAction {
    let n = supply.len();
    let mut moves = vec![vec![0u64; n]; n];
    for (i, &s) in supply.iter().enumerate() {
        let mut left = rng.random_range(0..=s);
        for (j, cell) in moves[i].iter_mut().enumerate() {
            if j == i || left == 0 {
                continue;
            }
            let k = rng.random_range(0..=left);
            *cell = k;
            left -= k;
        }
    }
    RebalanceAction { moves }
}

/// All orderings of `0..m`.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

/// Shapley values by averaging marginal contributions over all `m!`
/// arrival orders.
pub fn shapley_by_orders<T>(m: usize, values: &[T]) -> Vec<T>
where
    T: Clone + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Div<Output = T> + From<i64>,
{
    let orders = permutations(m);
    let mut phi: Vec<T> = vec![T::from(0); m];
    for order in &orders {
        let mut mask = 0usize;
        for &p in order {
            let gain = values[mask | 1 << p].clone() - values[mask].clone();
            phi[p] = phi[p].clone() + gain;
            mask |= 1 << p;
        }
    }
    let n = T::from(orders.len() as i64);
    phi.into_iter().map(|x| x / n.clone()).collect()
}
