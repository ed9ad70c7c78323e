//! City-level metrics: demand satisfaction, vehicle usage equity, goal
//! distances and the fairness of regulator scores.
//!
//! All functions are pure and generic over [`Scalar`], so they can be run on
//! `f64` in the simulator and on exact rationals in tests.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::scalar::Scalar;

/// City goal thresholds: minimum satisfaction rate and minimum (non-positive)
/// usage equity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CityGoalSpec {
    pub q_sat: f64,
    pub q_equ: f64,
}

impl CityGoalSpec {
    pub fn new(q_sat: f64, q_equ: f64) -> Result<Self> {
        let spec = Self { q_sat, q_equ };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q_sat) {
            return Err(Error::Config {
                field: "goals.q_sat".into(),
                reason: format!("{} not in [0, 1]", self.q_sat),
            });
        }
        if !(self.q_equ <= 0.0) {
            return Err(Error::Config {
                field: "goals.q_equ".into(),
                reason: format!("{} must be <= 0", self.q_equ),
            });
        }
        Ok(())
    }
}

/// Signed gap between goal and achievement; positive means the goal is unmet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalDistance<T> {
    pub g_sat: T,
    pub g_equ: T,
}

impl GoalDistance<f64> {
    /// Both components clipped at zero from below.
    pub fn clipped(&self) -> Self {
        Self {
            g_sat: self.g_sat.max(0.0),
            g_equ: self.g_equ.max(0.0),
        }
    }

    pub fn goals_met(&self) -> bool {
        self.g_sat <= 0.0 && self.g_equ <= 0.0
    }
}

/// Score-assignment fairness, always `<= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FairnessValue<T>(pub T);

/// Mean over regions with positive demand of `satisfied / demand`.
/// Returns one when no region has demand.
pub fn satisfaction_rate<T: Scalar>(satisfied: &[T], demand: &[T]) -> Result<T> {
    ensure_len("satisfied vs demand", satisfied.len(), demand.len())?;
    let mut acc = T::zero();
    let mut active = 0u64;
    for (i, (d, u)) in satisfied.iter().zip(demand).enumerate() {
        if d > u {
            return Err(Error::SatisfiedExceedsDemand {
                region: i,
                satisfied: format!("{d:?}"),
                demand: format!("{u:?}"),
            });
        }
        if *u > T::zero() {
            acc = acc + d.clone() / u.clone();
            active += 1;
        }
    }
    if active == 0 {
        return Ok(T::one());
    }
    Ok(acc / T::from_count(active))
}

/// Negated total deviation of regional demand/supply ratios from the city
/// ratio. Supply denominators are clamped to at least one vehicle.
pub fn usage_equity<T: Scalar>(demand: &[T], supply: &[T]) -> Result<T> {
    ensure_len("demand vs supply", demand.len(), supply.len())?;
    let clamped: Vec<T> = supply
        .iter()
        .map(|s| T::max_of(s.clone(), T::one()))
        .collect();
    let total_u = demand.iter().cloned().fold(T::zero(), |a, b| a + b);
    let total_s = clamped.iter().cloned().fold(T::zero(), |a, b| a + b);
    if total_s.is_zero() {
        return Ok(T::zero());
    }
    let city = total_u / total_s;
    let dev = demand
        .iter()
        .zip(&clamped)
        .map(|(u, s)| (u.clone() / s.clone() - city.clone()).abs())
        .fold(T::zero(), |a, b| a + b);
    Ok(-dev)
}

pub fn goal_distance<T: Scalar>(c_sat: T, c_equ: T, goals: &CityGoalSpec) -> GoalDistance<T> {
    let q_sat = T::from_f64(goals.q_sat).expect("goal representable");
    let q_equ = T::from_f64(goals.q_equ).expect("goal representable");
    GoalDistance {
        g_sat: q_sat - c_sat,
        g_equ: q_equ - c_equ,
    }
}

/// Negated total deviation of per-operator score/net-revenue ratios from the
/// pooled ratio. Net revenue denominators are clamped to at least one.
pub fn score_fairness<T: Scalar>(scores: &[T], net_revenue: &[T]) -> Result<FairnessValue<T>> {
    ensure_len("scores vs net revenue", scores.len(), net_revenue.len())?;
    let clamped: Vec<T> = net_revenue
        .iter()
        .map(|z| T::max_of(z.clone(), T::one()))
        .collect();
    let pooled_pen = scores.iter().cloned().fold(T::zero(), |a, b| a + b);
    let pooled_net = clamped.iter().cloned().fold(T::zero(), |a, b| a + b);
    if pooled_net.is_zero() {
        return Ok(FairnessValue(T::zero()));
    }
    let pooled = pooled_pen / pooled_net;
    let dev = scores
        .iter()
        .zip(&clamped)
        .map(|(p, z)| (p.clone() / z.clone() - pooled.clone()).abs())
        .fold(T::zero(), |a, b| a + b);
    Ok(FairnessValue(-dev))
}

/// Alternative equity: mean absolute deviation of regional satisfaction rates
/// from the global rate, over regions with positive demand.
pub fn dfd_equity<T: Scalar>(satisfied: &[T], demand: &[T]) -> Result<T> {
    ensure_len("satisfied vs demand", satisfied.len(), demand.len())?;
    let mut total_d = T::zero();
    let mut total_u = T::zero();
    let mut active = 0u64;
    for (i, (d, u)) in satisfied.iter().zip(demand).enumerate() {
        if d > u {
            return Err(Error::SatisfiedExceedsDemand {
                region: i,
                satisfied: format!("{d:?}"),
                demand: format!("{u:?}"),
            });
        }
        if *u > T::zero() {
            total_d = total_d + d.clone();
            total_u = total_u + u.clone();
            active += 1;
        }
    }
    if active == 0 {
        return Ok(T::zero());
    }
    let global = total_d / total_u;
    let dev = satisfied
        .iter()
        .zip(demand)
        .filter(|(_, u)| **u > T::zero())
        .map(|(d, u)| (d.clone() / u.clone() - global.clone()).abs())
        .fold(T::zero(), |a, b| a + b);
    Ok(-(dev / T::from_count(active)))
}

/// Alternative fairness: total absolute deviation of scores from their mean.
pub fn dfd_fairness<T: Scalar>(scores: &[T]) -> FairnessValue<T> {
    if scores.is_empty() {
        return FairnessValue(T::zero());
    }
    let mean = scores.iter().cloned().fold(T::zero(), |a, b| a + b)
        / T::from_count(scores.len() as u64);
    let dev = scores
        .iter()
        .map(|z| (z.clone() - mean.clone()).abs())
        .fold(T::zero(), |a, b| a + b);
    FairnessValue(-dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::Rational64;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn satisfaction_examples() {
        assert_abs_diff_eq!(satisfaction_rate(&[5.0, 10.0], &[10.0, 10.0]).unwrap(), 0.75);
        assert_eq!(satisfaction_rate(&[7.0, 3.0], &[7.0, 3.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(satisfaction_rate(&[5.0, 0.0], &[10.0, 0.0]).unwrap(), 0.5);
        assert_eq!(satisfaction_rate::<f64>(&[0.0], &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn satisfaction_errors() {
        assert!(matches!(
            satisfaction_rate(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            satisfaction_rate(&[3.0], &[2.0]),
            Err(Error::SatisfiedExceedsDemand { region: 0, .. })
        ));
    }

    #[test]
    fn equity_examples() {
        assert_eq!(usage_equity(&[10.0, 10.0], &[5.0, 5.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(usage_equity(&[10.0, 30.0], &[10.0, 10.0]).unwrap(), -2.0);
        // exact: clamped ratios 10 and 1 against 20/11
        assert_eq!(
            usage_equity(&[r(10, 1), r(10, 1)], &[r(0, 1), r(10, 1)]).unwrap(),
            r(-9, 1)
        );
        assert_eq!(usage_equity::<f64>(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(usage_equity(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn goal_distance_examples() {
        let goals = CityGoalSpec::new(0.9, -20.0).unwrap();
        let g = goal_distance(0.85, -30.0, &goals);
        assert_abs_diff_eq!(g.g_sat, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(g.g_equ, 10.0, epsilon = 1e-12);
        let g = goal_distance(0.95, -20.0, &goals);
        assert_abs_diff_eq!(g.g_sat, -0.05, epsilon = 1e-12);
        assert_eq!(g.g_equ, 0.0);
    }

    #[test]
    fn goal_spec_validation() {
        assert!(CityGoalSpec::new(1.2, -1.0).is_err());
        assert!(CityGoalSpec::new(0.5, 1.0).is_err());
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(score_fairness(&[10.0, 20.0], &[100.0, 200.0]).unwrap().0, 0.0);
        assert_eq!(
            score_fairness(&[r(30, 1), r(0, 1)], &[r(100, 1), r(200, 1)]).unwrap().0,
            r(-3, 10)
        );
        assert_eq!(score_fairness(&[42.0], &[7.0]).unwrap().0, 0.0);
        assert!(score_fairness(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dfd_examples() {
        assert_eq!(dfd_equity(&[5.0, 5.0], &[10.0, 10.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(dfd_equity(&[10.0, 0.0], &[10.0, 10.0]).unwrap(), -0.5);
        assert_eq!(dfd_equity(&[3.0], &[9.0]).unwrap(), 0.0);
        assert_eq!(dfd_fairness(&[10.0, 20.0, 30.0]).0, -20.0);
        assert_eq!(dfd_fairness(&[4.0, 4.0]).0, 0.0);
        assert_eq!(dfd_fairness(&[-5.0, 5.0]).0, -10.0);
    }

    proptest! {
        #[test]
        fn satisfaction_in_unit_interval(pairs in prop::collection::vec((0u32..50, 0u32..50), 1..10)) {
            let demand: Vec<f64> = pairs.iter().map(|(a, b)| (*a.max(b)) as f64).collect();
            let sat: Vec<f64> = pairs.iter().map(|(a, b)| (*a.min(b)) as f64).collect();
            let c = satisfaction_rate(&sat, &demand).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
        }

        #[test]
        fn equity_permutation_invariant(
            pairs in prop::collection::vec((0i64..40, 0i64..40), 2..8),
            rot in 0usize..8,
        ) {
            let u: Vec<Rational64> = pairs.iter().map(|p| r(p.0, 1)).collect();
            let s: Vec<Rational64> = pairs.iter().map(|p| r(p.1, 1)).collect();
            let base = usage_equity(&u, &s).unwrap();
            let mut u2 = u.clone();
            let mut s2 = s.clone();
            let k = rot % u.len();
            u2.rotate_left(k);
            s2.rotate_left(k);
            u2.reverse();
            s2.reverse();
            prop_assert_eq!(usage_equity(&u2, &s2).unwrap(), base);
            prop_assert!(base <= r(0, 1));
        }

        #[test]
        fn fairness_scale_invariant(
            rows in prop::collection::vec((-50i64..50, 1i64..200), 1..6),
            k in 1i64..20,
        ) {
            let p: Vec<Rational64> = rows.iter().map(|x| r(x.0, 1)).collect();
            let z: Vec<Rational64> = rows.iter().map(|x| r(x.1, 1)).collect();
            let pk: Vec<Rational64> = p.iter().map(|x| x * k).collect();
            let zk: Vec<Rational64> = z.iter().map(|x| x * k).collect();
            let a = score_fairness(&p, &z).unwrap().0;
            prop_assert_eq!(a, score_fairness(&pk, &zk).unwrap().0);
            prop_assert!(a <= r(0, 1));
        }

        #[test]
        fn goal_distance_zero_on_goal(q_sat in 0.0f64..1.0, q_equ in -50.0f64..0.0) {
            let goals = CityGoalSpec::new(q_sat, q_equ).unwrap();
            let g = goal_distance(q_sat, q_equ, &goals);
            prop_assert_eq!(g.g_sat, 0.0);
            prop_assert_eq!(g.g_equ, 0.0);
        }
    }
}
