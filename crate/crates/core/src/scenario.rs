//! Desk-scale synthetic city used for experiments and smoke tests.
//!
//! Six regions: a downtown core (0-2) with long, well-paid trips and three
//! outlying regions (3-5) whose short trips mostly head downtown. Fleets are
//! smaller than downtown demand, so revenue-seeking operators let the outer
//! regions starve.

use crate::config::{DataSection, RunConfig, SimSection, SyntheticSection};
use crate::ingest::SynthConfig;
use crate::metrics::CityGoalSpec;
use crate::orchestrator::{RegulatorConfig, TrainConfig, Variant};

pub const DESK_REGIONS: usize = 6;
pub const DESK_OPERATORS: usize = 3;
pub const DESK_DAYS: usize = 14;

const CORE: [usize; 3] = [0, 1, 2];

fn is_core(i: usize) -> bool {
    CORE.contains(&i)
}

/// Hourly demand multipliers with morning and evening peaks.
pub fn desk_profile() -> Vec<f64> {
    vec![
        0.3, 0.2, 0.2, 0.2, 0.3, 0.5, 0.9, 1.4, 1.6, 1.3, 1.1, 1.1, 1.2, 1.2, 1.1, 1.1, 1.3, 1.6, 1.7, 1.4, 1.1,
        0.8, 0.6, 0.4,
    ]
}

/// Centroids around the Chicago Loop, roughly 2 km apart in the core and
/// 7-9 km out for the outer regions.
pub fn desk_centroids() -> Vec<[f64; 2]> {
    vec![
        [-87.630, 41.882],
        [-87.650, 41.895],
        [-87.615, 41.900],
        [-87.720, 41.830],
        [-87.560, 41.800],
        [-87.700, 41.960],
    ]
}

pub fn desk_synth() -> SynthConfig {
    let scales = [1.0, 0.75, 0.5];
    let rates = scales
        .iter()
        .map(|&s| {
            (0..DESK_REGIONS)
                .map(|i| {
                    (0..DESK_REGIONS)
                        .map(|j| {
                            let base = match (is_core(i), is_core(j)) {
                                (true, true) => 1.6,
                                (true, false) => 0.15,
                                (false, true) => 0.8,
                                (false, false) => 0.1,
                            };
                            base * s
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let durations_s = (0..DESK_REGIONS)
        .map(|i| {
            (0..DESK_REGIONS)
                .map(|j| match (is_core(i), is_core(j)) {
                    (true, true) => 1500.0,
                    (true, false) => 1200.0,
                    (false, true) => 600.0,
                    (false, false) => 420.0,
                })
                .collect()
        })
        .collect();
    SynthConfig {
        regions: DESK_REGIONS,
        operators: DESK_OPERATORS,
        days: DESK_DAYS,
        slots_per_day: 24,
        rates,
        profile: desk_profile(),
        durations_s,
        operator_labels: vec!["Lime".into(), "Spin".into(), "Bird".into()],
    }
}

/// Training settings sized for minutes-long desk runs.
pub fn desk_train() -> TrainConfig {
    TrainConfig {
        n_iter: 120,
        gamma: 0.9,
        hidden: vec![32, 32],
        updates_per_iteration: 20,
        lr_actor: 1e-3,
        reward_scale: 1e-3,
        min_iterations: 120,
        ..TrainConfig::default()
    }
}

pub fn desk_regulator() -> RegulatorConfig {
    RegulatorConfig {
        priority_regions: vec![3, 4, 5],
        kappa: 1.0,
        ..RegulatorConfig::default()
    }
}

/// The complete desk scenario: 14 days, train on the first 10, evaluate on
/// the last 4.
pub fn desk_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        variant: Variant::Full,
        out_dir: None,
        sim: SimSection {
            fleet_sizes: vec![40, 30, 20],
            slots_per_day: 24,
            rebalance_every: 12,
            horizon: 3,
            unlock_fee: 1.00,
            per_minute_fee: 0.39,
            alpha: 2.422,
            truck_capacity: 20,
            goals: CityGoalSpec {
                q_sat: 0.7,
                q_equ: -5.0,
            },
            distance_km: None,
        },
        data: DataSection {
            trips: None,
            regions: None,
            synthetic: Some(SyntheticSection {
                seed: 2022,
                centroids: desk_centroids(),
                spec: desk_synth(),
            }),
            train_days: [0, 10],
            eval_days: [10, 14],
        },
        train: desk_train(),
        regulator: desk_regulator(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid() {
        let cfg = desk_config(1);
        cfg.validate().unwrap();
        let mat = cfg.materialize().unwrap();
        assert_eq!((mat.sim.regions, mat.sim.operators), (DESK_REGIONS, DESK_OPERATORS));
        assert_eq!(mat.dataset.days, DESK_DAYS);
        assert_eq!(desk_profile().len(), 24);
    }
}
