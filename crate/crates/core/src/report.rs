//! CSV tables written by training and evaluation runs.
//!
//! Every file opens with a `# config_hash=<hex>` comment line followed by a
//! header row.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::orchestrator::{Evaluation, IterationReport, MetricsRow};

pub const HASH_PREFIX: &str = "# config_hash=";

fn writer<W: Write>(mut w: W, hash: &str) -> Result<csv::Writer<W>> {
    writeln!(w, "{HASH_PREFIX}{hash}")?;
    Ok(csv::Writer::from_writer(w))
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn per_operator(prefix: &str, labels: &[String]) -> Vec<String> {
    labels.iter().map(|l| format!("{prefix}_{l}")).collect()
}

/// Per-iteration training statistics. Wall time goes to [`write_timing`] so
/// that this table stays reproducible.
pub fn write_iterations<W: Write>(w: W, hash: &str, labels: &[String], reports: &[IterationReport]) -> Result<()> {
    let mut out = writer(w, hash)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(per_operator("net_revenue", labels));
    header.extend(
        ["net_revenue_total", "c_sat", "c_equ", "fairness_mean", "delta_loss", "critic_loss"].map(String::from),
    );
    out.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.net_revenue.iter().map(|&x| f(x)));
        row.extend([r.total_net_revenue(), r.c_sat, r.c_equ, r.fairness_mean, r.delta_loss, r.critic_loss].map(f));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_timing<W: Write>(w: W, hash: &str, reports: &[IterationReport]) -> Result<()> {
    let mut out = writer(w, hash)?;
    out.write_record(["iteration", "wall_time_s"])?;
    for r in reports {
        out.write_record([r.iteration.to_string(), format!("{:.3}", r.wall_time_s)])?;
    }
    out.flush()?;
    Ok(())
}

/// The evaluation table: one row per variant.
pub fn write_metrics<W: Write>(w: W, hash: &str, labels: &[String], rows: &[MetricsRow]) -> Result<()> {
    let mut out = writer(w, hash)?;
    let mut header = vec!["variant".to_string()];
    header.extend(per_operator("net_revenue", labels));
    header.extend(["satisfaction_pct", "usage_equity"].map(String::from));
    header.extend(per_operator("score", labels));
    header.extend(["score_ratio_std", "fairness_mean"].map(String::from));
    header.extend(per_operator("reb_km", labels));
    out.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.label.clone()];
        row.extend(r.net_revenue.iter().map(|&x| f(x)));
        row.extend([r.satisfaction_pct, r.usage_equity].map(f));
        row.extend(r.scores.iter().map(|&x| f(x)));
        row.extend([r.score_ratio_std, r.fairness_mean].map(f));
        row.extend(r.reb_km.iter().map(|&x| f(x)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-day, per-operator totals plus the day's mean city goals.
pub fn write_daily<W: Write>(w: W, hash: &str, labels: &[String], eval: &Evaluation) -> Result<()> {
    #[derive(Default, Clone)]
    struct Day {
        net: Vec<f64>,
        score: Vec<f64>,
        km: Vec<f64>,
        demand: Vec<u64>,
        served: Vec<u64>,
        c_sat: f64,
        c_equ: f64,
        intervals: usize,
    }
    let m = labels.len();
    let spd = eval.slots_per_day.max(1);
    let mut days: Vec<Day> = Vec::new();
    for rec in &eval.episode.intervals {
        let d = rec.outcome.start_slot / spd;
        if days.len() <= d {
            days.resize(
                d + 1,
                Day {
                    net: vec![0.0; m],
                    score: vec![0.0; m],
                    km: vec![0.0; m],
                    demand: vec![0; m],
                    served: vec![0; m],
                    ..Day::default()
                },
            );
        }
        let day = &mut days[d];
        for k in 0..m {
            day.net[k] += rec.outcome.net_revenue[k];
            day.score[k] += rec.outcome.score[k];
            day.km[k] += rec.outcome.reb_km[k];
            for s in &rec.outcome.slots {
                day.demand[k] += s.demand[k].iter().sum::<u64>();
                day.served[k] += s.satisfied.counts[k].iter().sum::<u64>();
            }
        }
        day.c_sat += rec.city.c_sat;
        day.c_equ += rec.city.c_equ;
        day.intervals += 1;
    }
    let mut out = writer(w, hash)?;
    out.write_record([
        "day",
        "operator",
        "net_revenue",
        "score",
        "reb_km",
        "demand",
        "served",
        "city_satisfaction",
        "city_equity",
    ])?;
    for (d, day) in days.iter().enumerate() {
        if day.intervals == 0 {
            continue;
        }
        let k = day.intervals as f64;
        for (op, label) in labels.iter().enumerate() {
            out.write_record([
                d.to_string(),
                label.clone(),
                f(day.net[op]),
                f(day.score[op]),
                f(day.km[op]),
                day.demand[op].to_string(),
                day.served[op].to_string(),
                f(day.c_sat / k),
                f(day.c_equ / k),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-day, per-region, per-operator mean vehicles at slot start, plus demand
/// and served trips.
pub fn write_regional<W: Write>(w: W, hash: &str, labels: &[String], eval: &Evaluation) -> Result<()> {
    let spd = eval.slots_per_day.max(1);
    let slots: Vec<_> = eval.episode.intervals.iter().flat_map(|r| &r.outcome.slots).collect();
    let mut out = writer(w, hash)?;
    out.write_record(["day", "region", "operator", "mean_vehicles", "demand", "served"])?;
    let Some(first) = slots.first() else {
        out.flush()?;
        return Ok(());
    };
    let regions = first.demand.first().map_or(0, Vec::len);
    let base_day = first.slot / spd;
    let mut start = 0;
    while start < slots.len() {
        let day = slots[start].slot / spd;
        let end = start + slots[start..].iter().take_while(|s| s.slot / spd == day).count();
        let chunk = &slots[start..end];
        for i in 0..regions {
            for (m, label) in labels.iter().enumerate() {
                let vehicles: u64 = chunk.iter().map(|s| s.supply[m][i]).sum();
                let demand: u64 = chunk.iter().map(|s| s.demand[m][i]).sum();
                let served: u64 = chunk.iter().map(|s| s.satisfied.counts[m][i]).sum();
                out.write_record([
                    (day - base_day).to_string(),
                    i.to_string(),
                    label.clone(),
                    f(vehicles as f64 / chunk.len() as f64),
                    demand.to_string(),
                    served.to_string(),
                ])?;
            }
        }
        start = end;
    }
    out.flush()?;
    Ok(())
}

/// The regulator's view of every rebalancing interval.
pub fn write_regulator<W: Write>(w: W, hash: &str, labels: &[String], eval: &Evaluation) -> Result<()> {
    let mut out = writer(w, hash)?;
    let mut header = ["start_slot", "c_sat", "c_equ", "g_sat", "g_equ"].map(String::from).to_vec();
    header.extend(per_operator("phi_sat", labels));
    header.extend(per_operator("phi_equ", labels));
    header.extend(per_operator("score", labels));
    header.push("fairness".into());
    out.write_record(&header)?;
    for rec in &eval.episode.intervals {
        let a = &rec.assessment;
        let mut row = vec![rec.outcome.start_slot.to_string()];
        row.extend([a.c_sat, a.c_equ, a.goal.g_sat, a.goal.g_equ].map(f));
        row.extend(a.attribution.phi_sat.iter().map(|&x| f(x)));
        row.extend(a.attribution.phi_equ.iter().map(|&x| f(x)));
        row.extend(rec.outcome.score.iter().map(|&x| f(x)));
        row.push(f(a.fairness));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Splits a table into its config hash and the CSV body.
pub fn read_table<R: BufRead>(mut r: R) -> Result<(String, String)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let hash = first
        .trim_end()
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| Error::InvalidArgument("table lacks a config hash line".into()))?
        .to_string();
    let mut body = String::new();
    r.read_to_string(&mut body)?;
    Ok((hash, body))
}

/// Concatenates iteration tables from several runs, prefixing each row with
/// its run name. All inputs must share one header.
pub fn merge_tables<W: Write>(w: W, runs: &[(String, String)]) -> Result<()> {
    let mut hashes = Vec::new();
    let mut header: Option<csv::StringRecord> = None;
    let mut rows = Vec::new();
    for (name, text) in runs {
        let (hash, body) = read_table(text.as_bytes())?;
        if !hashes.contains(&hash) {
            hashes.push(hash);
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let h = rd.headers()?.clone();
        match &header {
            None => header = Some(h),
            Some(prev) if *prev != h => {
                return Err(Error::InvalidArgument(format!("{name}: header differs from the first table")))
            }
            _ => {}
        }
        for rec in rd.records() {
            let mut row = vec![name.clone()];
            row.extend(rec?.iter().map(String::from));
            rows.push(row);
        }
    }
    let header = header.ok_or(Error::EmptySequence("tables to merge"))?;
    let mut out = writer(w, &hashes.join(","))?;
    let mut full = vec!["run".to_string()];
    full.extend(header.iter().map(String::from));
    out.write_record(&full)?;
    for row in rows {
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
