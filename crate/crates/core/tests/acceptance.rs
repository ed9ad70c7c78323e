//! The acceptance gate: one test per criterion, each printing a PASS/FAIL
//! line before asserting. Run with `--nocapture` to see the lines.

mod common;

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use fleetreg_core::env::{money, Env, RebalanceAction};
use fleetreg_core::experiment::Prepared;
use fleetreg_core::ingest::{build_demand, parse_trips, write_trips, RegionMap, TripRecord};
use fleetreg_core::metrics::{dfd_equity, satisfaction_rate, score_fairness, usage_equity};
use fleetreg_core::nn::{Adam, Sgd};
use fleetreg_core::orchestrator::{Evaluation, Variant};
use fleetreg_core::regulator::shapley;
use fleetreg_core::report::write_metrics;
use fleetreg_core::scenario::desk_config;
use fleetreg_core::scheduler::{actor_action, update_actor, update_critic, ActionValue};
use fleetreg_core::{Mlp, Result as CoreResult};
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_feasible, shapley_by_orders, small_dataset, small_sim};

fn verdict(id: &str, pass: bool, detail: String) {
    println!("{id} {}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

// A1

fn random_game(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..1usize << m).map(|_| rng.random_range(-10.0..10.0)).collect()
}

#[test]
fn a1_shapley_axioms() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut oracle_ok = true;
    for m in 2..=4usize {
        let full = (1usize << m) - 1;
        for _ in 0..1000 {
            // exact comparison with the order-averaging oracle
            let ints: Vec<Rational64> = (0..=full).map(|_| Rational64::from(rng.random_range(-50i64..50))).collect();
            oracle_ok &= shapley(m, &ints).unwrap() == shapley_by_orders(m, &ints);

            let v = random_game(&mut rng, m);
            let phi = shapley(m, &v).unwrap();
            worst = worst.max((phi.iter().sum::<f64>() - (v[full] - v[0])).abs());

            // players 0 and 1 are exchangeable
            let mut sym = v.clone();
            for mask in 0..=full {
                if mask & 1 == 1 && mask & 2 == 0 {
                    sym[mask] = sym[mask ^ 3];
                }
            }
            let ps = shapley(m, &sym).unwrap();
            worst = worst.max((ps[0] - ps[1]).abs());

            // the last player never changes the value
            let d = 1usize << (m - 1);
            let mut dummy = v.clone();
            for mask in 0..=full {
                if mask & d != 0 {
                    dummy[mask] = dummy[mask ^ d];
                }
            }
            worst = worst.max(shapley(m, &dummy).unwrap()[m - 1].abs());

            let w = random_game(&mut rng, m);
            let a = rng.random_range(-3.0..3.0);
            let mix: Vec<f64> = v.iter().zip(&w).map(|(x, y)| x + a * y).collect();
            let pw = shapley(m, &w).unwrap();
            for (k, pm) in shapley(m, &mix).unwrap().iter().enumerate() {
                worst = worst.max((pm - (phi[k] + a * pw[k])).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = oracle_ok && worst <= 1e-9 && within(elapsed, 10);
    verdict(
        "A1",
        pass,
        format!("oracle exact {oracle_ok}, max axiom residual {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// A2

#[test]
fn a2_metric_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ok = true;
    for _ in 0..10_000 {
        let n = rng.random_range(1..12);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0..40) as f64).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..40) as f64).collect();
        let d: Vec<f64> = u.iter().map(|&x| rng.random_range(0..=x as u32) as f64).collect();

        let positive: Vec<f64> = u.iter().map(|x| x + 1.0).collect();
        ok &= satisfaction_rate(&positive, &positive).unwrap() == 1.0;

        let base: Vec<f64> = (0..n).map(|_| rng.random_range(1..30) as f64).collect();
        let k = rng.random_range(0..6) as f64;
        let uniform: Vec<f64> = base.iter().map(|b| k * b).collect();
        ok &= usage_equity(&uniform, &base).unwrap() == 0.0;

        let z: Vec<f64> = (0..n).map(|_| rng.random_range(1..500) as f64).collect();
        let r = 0.25 * rng.random_range(0..8) as f64;
        let prop: Vec<f64> = z.iter().map(|x| r * x).collect();
        ok &= score_fairness(&prop, &z).unwrap().0 == 0.0;

        let sat = satisfaction_rate(&d, &u).unwrap();
        ok &= (0.0..=1.0).contains(&sat);
        ok &= usage_equity(&u, &s).unwrap() <= 0.0;
        ok &= dfd_equity(&d, &u).unwrap() <= 0.0;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        ok &= score_fairness(&scores, &s).unwrap().0 <= 0.0;
    }
    let elapsed = start.elapsed();
    let pass = ok && within(elapsed, 5);
    verdict("A2", pass, format!("10000 random inputs, {:.2}s", elapsed.as_secs_f64()));
    assert!(pass);
}

// A3

fn max_fd_error(net: &Mlp<f64>, x: &[f64], w: &[f64]) -> f64 {
    let (analytic, _) = net.backward(x, w).unwrap();
    let objective = |p: &Mlp<f64>| p.forward(x).unwrap().iter().zip(w).map(|(o, c)| o * c).sum::<f64>();
    let h = 1e-6;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for k in 0..net.num_params() {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + h;
        let up = objective(&probe);
        probe.params_mut()[k] = orig - h;
        let down = objective(&probe);
        probe.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn a3_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let width = if k % 5 == 4 { 64 } else { rng.random_range(2..48) };
        let sizes = [rng.random_range(1..24), width, if k % 5 == 4 { 64 } else { width }, rng.random_range(1..8)];
        let net = Mlp::<f64>::new(&sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..sizes[3]).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(max_fd_error(&net, &x, &w));
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && within(elapsed, 10);
    verdict(
        "A3",
        pass,
        format!("20 networks, max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// A4

/// `Q(s, a) = -(a - target)^2`, ignoring the state.
struct Quadratic {
    target: f64,
}

impl ActionValue<f64> for Quadratic {
    fn value(&self, input: &[f64]) -> CoreResult<f64> {
        let a = input[input.len() - 1];
        Ok(-(a - self.target).powi(2))
    }

    fn value_grad(&self, input: &[f64]) -> CoreResult<(f64, Vec<f64>)> {
        let a = input[input.len() - 1];
        let mut g = vec![0.0; input.len()];
        g[input.len() - 1] = -2.0 * (a - self.target);
        Ok((-(a - self.target).powi(2), g))
    }
}

#[test]
fn a4_learning_sanity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut critic = Mlp::<f64>::new(&[6, 32, 32, 1], &mut rng);
    let inputs: Vec<Vec<f64>> = (0..64).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = inputs.iter().map(|x| x[0] * x[1] + x[2].sin() - 0.5 * x[5]).collect();
    let mut opt = Adam::new(1e-3, critic.num_params());
    let first = update_critic(&mut critic, &mut opt, &inputs, &targets).unwrap();
    let mut last = first;
    for _ in 1..200 {
        last = update_critic(&mut critic, &mut opt, &inputs, &targets).unwrap();
    }
    let reduction = 1.0 - last / first;

    let mut actor = Mlp::<f64>::new(&[1, 8, 1], &mut rng);
    let q = Quadratic { target: 0.5 };
    let obs = [1.0];
    let before = (actor_action(&actor, &obs).unwrap()[0] - q.target).abs();
    let mut sgd = Sgd { lr: 0.05 };
    for _ in 0..200 {
        let a = actor_action(&actor, &obs).unwrap();
        let joint = vec![a];
        update_actor(&mut actor, &mut sgd, &q, &[(&obs[..], &joint[..])], 0).unwrap();
    }
    let after = (actor_action(&actor, &obs).unwrap()[0] - q.target).abs();
    let elapsed = start.elapsed();
    let pass = reduction >= 0.5 && after < before && within(elapsed, 30);
    verdict(
        "A4",
        pass,
        format!(
            "critic loss {first:.4} -> {last:.4} ({:.0}% lower); actor distance to maximizer {before:.3} -> {after:.3}; {:.2}s",
            100.0 * reduction,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// A5-A7 share trained desk runs.

struct DeskRuns {
    prep: Prepared,
    full: Evaluation,
    no_regulation: Evaluation,
    no_fasa: Evaluation,
    elapsed: Duration,
}

fn desk_runs() -> &'static DeskRuns {
    static RUNS: OnceLock<DeskRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let prep = Prepared::new(desk_config(1)).unwrap();
        let run = |v: Variant| {
            let out = prep.train(v, |_| {}).unwrap();
            prep.evaluate(Some(&out.best_policies), v).unwrap()
        };
        let full = run(Variant::Full);
        let no_regulation = run(Variant::NoRegulation);
        let no_fasa = run(Variant::NoFasa);
        DeskRuns {
            full,
            no_regulation,
            no_fasa,
            elapsed: start.elapsed(),
            prep,
        }
    })
}

fn metrics_csv(prep: &Prepared, eval: &Evaluation) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics(&mut buf, &prep.config_hash, prep.operator_labels(), std::slice::from_ref(&eval.metrics)).unwrap();
    buf
}

#[test]
fn a5_regulation_improves_equity() {
    let runs = desk_runs();
    let (full, base) = (&runs.full.metrics, &runs.no_regulation.metrics);
    let gain = (full.usage_equity - base.usage_equity) / base.usage_equity.abs();
    let sat_drop = base.satisfaction_pct - full.satisfaction_pct;
    let pass = gain >= 0.10 && sat_drop <= 1.0 && within(runs.elapsed, 30 * 60);
    verdict(
        "A5",
        pass,
        format!(
            "equity {:.3} vs {:.3} without regulation ({:+.1}%), satisfaction {:.2}% vs {:.2}%, training {:.0}s",
            full.usage_equity,
            base.usage_equity,
            100.0 * gain,
            full.satisfaction_pct,
            base.satisfaction_pct,
            runs.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn a6_fairness_term_evens_score_ratios() {
    let runs = desk_runs();
    let (full, off) = (runs.full.metrics.score_ratio_std, runs.no_fasa.metrics.score_ratio_std);
    let pass = full < off;
    verdict(
        "A6",
        pass,
        format!("score/net-revenue ratio std {full:.5} with fairness term, {off:.5} with beta = 1"),
    );
    assert!(pass);
}

#[test]
fn a7_identical_runs_give_identical_bytes() {
    let runs = desk_runs();
    let first = metrics_csv(&runs.prep, &runs.full);
    let prep = Prepared::new(desk_config(1)).unwrap();
    let out = prep.train(Variant::Full, |_| {}).unwrap();
    let second_eval = prep.evaluate(Some(&out.best_policies), Variant::Full).unwrap();
    let second = metrics_csv(&prep, &second_eval);
    let pass = first == second;
    verdict("A7", pass, format!("metrics CSVs of two full runs, {} bytes each", first.len()));
    assert!(pass);
}

// A8

const SAMPLE_ROW: &str = "Trip ID,Start Time,End Time,Trip Distance (m),Trip Duration (s),Start Region,End Region,Vehicle Operator
T001, 5/28/2022 14:00, 5/28/2022 15:00, 2484, 1544, -87.62519 41.87887, -87.62520 41.87886, Lime
";

#[test]
fn a8_ingestion_fidelity() {
    let start = Instant::now();
    let parsed = parse_trips(SAMPLE_ROW.as_bytes()).unwrap();
    let t = &parsed.trips[0];
    let row_ok = parsed.trips.len() == 1 && t.duration_s == 1544.0 && t.distance_m == 2484.0 && t.operator == "Lime";

    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let map = RegionMap::new(vec![(-87.63, 41.88), (-87.65, 41.90), (-87.70, 41.95), (-87.60, 41.80)]).unwrap();
    let labels = ["Lime", "Spin", "Bird"];
    let mut conserved = true;
    for _ in 0..50 {
        let count = rng.random_range(1..300);
        let day0 = chrono::NaiveDate::from_ymd_opt(2022, 5, 28).unwrap();
        let trips: Vec<TripRecord> = (0..count)
            .map(|k| {
                let start = day0.and_hms_opt(0, 0, 0).unwrap()
                    + chrono::Duration::minutes(rng.random_range(0..3 * 1440));
                let dur = rng.random_range(1..120);
                TripRecord {
                    trip_id: format!("R{k}"),
                    start_time: start,
                    end_time: start + chrono::Duration::minutes(dur),
                    distance_m: rng.random_range(100..9000) as f64,
                    duration_s: (dur * 60) as f64,
                    start_lon: rng.random_range(-87.75..-87.55),
                    start_lat: rng.random_range(41.75..42.0),
                    end_lon: rng.random_range(-87.75..-87.55),
                    end_lat: rng.random_range(41.75..42.0),
                    operator: labels[rng.random_range(0..3)].to_string(),
                }
            })
            .collect();
        let mut csv = Vec::new();
        write_trips(&mut csv, &trips).unwrap();
        let back = parse_trips(csv.as_slice()).unwrap();
        conserved &= back.skipped == 0 && back.trips.len() == trips.len();
        let ds = build_demand(&back.trips, &map, 24, None).unwrap();
        conserved &= ds.total_trips() == trips.len() as u64;
        for (m, label) in ds.operators.iter().enumerate() {
            let want = trips.iter().filter(|t| &t.operator == label).count() as u64;
            let got: u64 = ds.tensors.iter().map(|t| t.operator_total(m)).sum();
            conserved &= want == got;
        }
    }
    let elapsed = start.elapsed();
    let pass = row_ok && conserved && within(elapsed, 5);
    verdict(
        "A8",
        pass,
        format!(
            "sample row duration {} s, distance {} m, operator {}; conservation {conserved}; {:.2}s",
            t.duration_s,
            t.distance_m,
            t.operator,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// A9

#[test]
fn a9_simulation_conservation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let fleets = vec![25, 12, 7];
    let sim = Arc::new(small_sim(5, fleets.clone(), 1));
    let data = Arc::new(small_dataset(5, 3, 7, 0.6, 3));
    let mut env = Env::reset(sim.clone(), data.clone(), 19).unwrap();
    let mut conserved = true;
    let mut exact = true;
    let mut steps = 0;
    while steps < 10_000 {
        if env.is_done() {
            env = Env::reset(sim.clone(), data.clone(), 19).unwrap();
        }
        let actions: Vec<RebalanceAction> = env
            .state()
            .distribution
            .counts
            .iter()
            .map(|row| random_feasible(&mut rng, row))
            .collect();
        let scores: Vec<f64> = (0..3).map(|_| rng.random_range(-500.0..500.0)).collect();
        let out = env.step(&actions, &scores).unwrap();
        for (m, &f) in fleets.iter().enumerate() {
            conserved &= env.state().distribution.operator_total(m) == f;
        }
        for m in 0..3 {
            exact &= out.reward[m] + out.score[m] == out.net_revenue[m];
            exact &= out.score[m] == money(scores[m]);
        }
        steps += 1;
    }
    let elapsed = start.elapsed();
    let pass = conserved && exact && within(elapsed, 30);
    verdict(
        "A9",
        pass,
        format!(
            "{steps} random feasible steps, totals constant {conserved}, reward + score == net {exact}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}
