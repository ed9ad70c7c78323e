//! Trains and evaluates the desk scenario under a few variants.
//!
//! `cargo run --release -p fleetreg-core --example desk -- [seed] [variants..]`

use fleetreg_core::experiment::Prepared;
use fleetreg_core::orchestrator::Variant;
use fleetreg_core::scenario::desk_config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger_lite();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let variants: Vec<Variant> = {
        let v: Vec<Variant> = args.filter_map(|a| Variant::parse(&a)).collect();
        if v.is_empty() {
            vec![Variant::Sdsm, Variant::Sotp, Variant::NoRegulation, Variant::Full, Variant::NoFasa]
        } else {
            v
        }
    };
    let mut cfg = desk_config(seed);
    let var = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
    if let Some(x) = var("DESK_KAPPA") {
        cfg.regulator.kappa = x;
    }
    if let Some(x) = var("DESK_GAIN") {
        cfg.regulator.prior.gain = x;
    }
    if let Some(x) = var("DESK_BETA") {
        cfg.regulator.beta = x;
    }
    if let Some(x) = var("DESK_ITERS") {
        cfg.train.n_iter = x as usize;
        cfg.train.min_iterations = x as usize;
    }
    if let Some(x) = var("DESK_LR") {
        cfg.train.lr_actor = x;
    }
    if let Some(x) = var("DESK_GAMMA") {
        cfg.train.gamma = x;
    }
    if let Some(x) = var("DESK_UPD") {
        cfg.train.updates_per_iteration = x as usize;
    }
    if let Some(x) = var("DESK_REB") {
        cfg.sim.rebalance_every = x as usize;
    }
    if let Some(x) = var("DESK_QEQU") {
        cfg.sim.goals.q_equ = x;
    }
    let prep = Prepared::new(cfg)?;
    for v in variants {
        let start = std::time::Instant::now();
        let policies = if v.learned() {
            let out = prep.train(v, |r| {
                if r.iteration % 10 == 0 {
                    println!(
                        "  [{v}] it {:3} net {:9.1} sat {:.3} equ {:8.2} E {:.4} dl {:.4} cl {:.4}",
                        r.iteration,
                        r.total_net_revenue(),
                        r.c_sat,
                        r.c_equ,
                        r.fairness_mean,
                        r.delta_loss,
                        r.critic_loss
                    )
                }
            })?;
            println!("  best iteration {}", out.best_iteration);
            Some(out.best_policies)
        } else {
            None
        };
        let ev = prep.evaluate(policies.as_ref(), v)?;
        let m = &ev.metrics;
        println!(
            "{:18} net {:?} sat {:.2}% equ {:.3} scores {:?} ratio_std {:.5} km {:?} ({:.1}s)",
            m.label,
            m.net_revenue.iter().map(|x| x.round()).collect::<Vec<_>>(),
            m.satisfaction_pct,
            m.usage_equity,
            m.scores.iter().map(|x| x.round()).collect::<Vec<_>>(),
            m.score_ratio_std,
            m.reb_km.iter().map(|x| x.round()).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn env_logger_lite() {}
