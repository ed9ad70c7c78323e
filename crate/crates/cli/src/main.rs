//! Command-line front end: training, evaluation, Shapley diagnostics,
//! synthetic data and report merging.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fleetreg_core::checkpoint;
use fleetreg_core::config::RunConfig;
use fleetreg_core::experiment::Prepared;
use fleetreg_core::ingest::{dataset_to_trips, write_trips};
use fleetreg_core::orchestrator::Variant;
use fleetreg_core::regulator::{coalition_value, shapley, CoalitionValue, FairnessMode};
use fleetreg_core::report;
use fleetreg_core::scenario::desk_config;
use fleetreg_core::Error;

const THREADS_VAR: &str = "REALISM_THREADS";

#[derive(Parser)]
#[command(name = "fleetreg", version, about = "Regulated multi-operator fleet rebalancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train operator agents (and the regulator) and write a checkpoint.
    Train(TrainArgs),
    /// Run trained or rule-based policies on the evaluation days.
    Evaluate(EvalArgs),
    /// Shapley attribution of one supply/demand snapshot.
    Shapley(ShapleyArgs),
    /// Write a synthetic dataset with a config that trains on it.
    Synth(SynthArgs),
    /// Merge iteration tables from several runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    /// Checkpoint directory; defaults to the config's out_dir, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Needed without a checkpoint; with one it must match.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    /// Output directory; defaults to `<checkpoint>/eval-<variant>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Dfd,
}

#[derive(Args)]
struct ShapleyArgs {
    /// Vehicles per operator and region: `operator,region,count` rows.
    #[arg(long)]
    state: PathBuf,
    /// Trip requests in the same layout.
    #[arg(long)]
    demand: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    mode: ModeArg,
}

#[derive(Args)]
struct SynthArgs {
    /// Config with a synthetic section; the built-in desk city otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Iteration CSVs or checkpoint directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Input(String),
    Mismatch(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Mismatch(_) => 3,
            Failure::Internal(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::HashMismatch { .. } | Error::CheckpointVersion(_) | Error::StaleSnapshot { .. } => {
                Failure::Mismatch(msg)
            }
            Error::Config { .. }
            | Error::MissingColumn(_)
            | Error::InvalidArgument(_)
            | Error::Csv(_)
            | Error::TomlDe(_)
            | Error::Io(_)
            | Error::LengthMismatch { .. }
            | Error::Dimension(_) => Failure::Input(msg),
            _ => Failure::Internal(msg),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Internal(format!("{}: {e}", path.display()))
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Shapley(a) => cmd_shapley(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(m) | Failure::Mismatch(m) | Failure::Internal(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn configure_threads() -> Outcome {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Input(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(e.to_string()))
}

fn parse_variant(s: &str) -> Result<Variant, Failure> {
    Variant::parse(s).ok_or_else(|| {
        Failure::Input(format!(
            "unknown variant `{s}`; expected full, no-regulation, no-fasa, dfd, sdsm or sotp"
        ))
    })
}

fn load_config(path: &Path, seed: Option<u64>, variant: Option<&str>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        cfg.variant = parse_variant(v)?;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<fs::File, Failure> {
    fs::File::create(path).map_err(|e| io_err(path, e))
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let cfg = load_config(&a.config, a.seed, a.variant.as_deref())?;
    let variant = cfg.variant;
    if !variant.learned() {
        return Err(Failure::Input(format!("variant `{variant}` is rule-based; evaluate it directly")));
    }
    let out = a.out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let prep = Prepared::new(cfg)?;
    log::info!("training {variant} with config {}", prep.config_hash);
    let outcome = prep.train(variant, |r| {
        log::info!(
            "iteration {}: net {:.2}, c_sat {:.4}, c_equ {:.3}",
            r.iteration,
            r.total_net_revenue(),
            r.c_sat,
            r.c_equ
        )
    })?;
    checkpoint::save(&out, &prep.config, prep.operator_labels(), &outcome)?;
    println!(
        "trained {variant}: {} iterations{}, kept iteration {}, checkpoint {} (config {})",
        outcome.reports.len(),
        if outcome.converged { " (converged)" } else { "" },
        outcome.best_iteration,
        out.display(),
        prep.config_hash
    );
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> Outcome {
    let (cfg, policies, default_out) = match &a.checkpoint {
        Some(dir) => {
            if !dir.join("config.toml").is_file() {
                return Err(Failure::Mismatch(format!("{} is not a checkpoint directory", dir.display())));
            }
            let ck = match &a.config {
                Some(path) => {
                    let expected = load_config(path, a.seed, None)?;
                    checkpoint::load_matching(dir, &expected)?
                }
                None => {
                    let ck = checkpoint::load(dir)?;
                    if a.seed.is_some_and(|s| s != ck.config.seed) {
                        return Err(Failure::Mismatch(format!(
                            "checkpoint was trained with seed {}",
                            ck.config.seed
                        )));
                    }
                    ck
                }
            };
            (ck.config, Some(ck.policies), dir.clone())
        }
        None => {
            let path = a
                .config
                .as_ref()
                .ok_or_else(|| Failure::Input("evaluate needs --checkpoint or --config".into()))?;
            (load_config(path, a.seed, None)?, None, PathBuf::from("."))
        }
    };
    let variant = match &a.variant {
        Some(v) => parse_variant(v)?,
        None => cfg.variant,
    };
    if variant.learned() && policies.is_none() {
        return Err(Failure::Input(format!("variant `{variant}` needs --checkpoint")));
    }
    let out = a.out.unwrap_or_else(|| default_out.join(format!("eval-{}", variant.name())));
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let prep = Prepared::new(cfg)?;
    let eval = prep.evaluate(policies.as_ref(), variant)?;
    let labels = prep.operator_labels();
    let hash = &prep.config_hash;
    report::write_metrics(create(&out.join("metrics.csv"))?, hash, labels, std::slice::from_ref(&eval.metrics))?;
    report::write_daily(create(&out.join("daily.csv"))?, hash, labels, &eval)?;
    report::write_regional(create(&out.join("regional.csv"))?, hash, labels, &eval)?;
    report::write_regulator(create(&out.join("regulator.csv"))?, hash, labels, &eval)?;
    let m = &eval.metrics;
    println!(
        "{}: net revenue {:?}, satisfaction {:.2}%, equity {:.3}, scores {:?} -> {}",
        m.label,
        m.net_revenue.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
        m.satisfaction_pct,
        m.usage_equity,
        m.scores.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
        out.display()
    );
    Ok(())
}

/// Reads `operator,region,count` rows into a dense `[m][i]` table.
fn read_counts(path: &Path) -> Result<Vec<Vec<u64>>, Failure> {
    let bad = |msg: String| Failure::Input(format!("{}: {msg}", path.display()));
    let file = fs::File::open(path).map_err(|e| bad(e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let (co, cr, cc) = (col("operator")?, col("region")?, col("count")?);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize, what: &str| -> Result<u64, Failure> {
            rec.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("row {}: bad {what}", line + 1)))
        };
        rows.push((field(co, "operator")? as usize, field(cr, "region")? as usize, field(cc, "count")?));
    }
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    let m = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let n = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    let mut out = vec![vec![0u64; n]; m];
    for (o, r, c) in rows {
        out[o][r] += c;
    }
    Ok(out)
}

fn pad(table: &mut Vec<Vec<u64>>, m: usize, n: usize) {
    table.resize(m, Vec::new());
    for row in table.iter_mut() {
        row.resize(n, 0);
    }
}

fn cmd_shapley(a: ShapleyArgs) -> Outcome {
    let mut supply = read_counts(&a.state)?;
    let mut demand = read_counts(&a.demand)?;
    let m = supply.len().max(demand.len());
    let n = supply[0].len().max(demand[0].len());
    pad(&mut supply, m, n);
    pad(&mut demand, m, n);
    let mode = match a.mode {
        ModeArg::Standard => FairnessMode::Standard,
        ModeArg::Dfd => FairnessMode::Dfd,
    };
    // Operators with neither vehicles nor requests are not in the market;
    // they sit outside the game and get zero.
    let active: Vec<usize> = (0..m)
        .filter(|&k| supply[k].iter().chain(&demand[k]).any(|&c| c > 0))
        .collect();
    let pick = |t: &[Vec<u64>]| active.iter().map(|&k| t[k].clone()).collect::<Vec<_>>();
    let (sub_demand, sub_supply) = (pick(&demand), pick(&supply));
    let values = (0..1usize << active.len())
        .map(|mask| coalition_value::<f64>(mask, &sub_demand, &sub_supply, mode))
        .collect::<Result<Vec<CoalitionValue<f64>>, _>>()?;
    let sat: Vec<f64> = values.iter().map(|v| v.c_sat).collect();
    let equ: Vec<f64> = values.iter().map(|v| v.c_equ).collect();
    let (mut phi_sat, mut phi_equ) = (vec![0.0; m], vec![0.0; m]);
    for (slot, (s, e)) in active
        .iter()
        .zip(shapley(active.len(), &sat)?.into_iter().zip(shapley(active.len(), &equ)?))
    {
        phi_sat[*slot] = s;
        phi_equ[*slot] = e;
    }
    let mut stdout = std::io::stdout().lock();
    let mut emit = || -> std::io::Result<()> {
        writeln!(stdout, "operator,phi_sat,phi_equ")?;
        for k in 0..m {
            writeln!(stdout, "{k},{:.12},{:.12}", phi_sat[k], phi_equ[k])?;
        }
        let full = (1 << active.len()) - 1;
        let r_sat = (phi_sat.iter().sum::<f64>() - sat[full]).abs();
        let r_equ = (phi_equ.iter().sum::<f64>() - equ[full]).abs();
        writeln!(stdout, "efficiency residual: {:.3e}", r_sat.max(r_equ))
    };
    emit().map_err(|e| Failure::Internal(e.to_string()))
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => load_config(path, a.seed, None)?,
        None => desk_config(a.seed.unwrap_or(0)),
    };
    if cfg.data.synthetic.is_none() {
        return Err(Failure::Input("config has no [data.synthetic] section".into()));
    }
    if let (Some(s), Some(seed)) = (cfg.data.synthetic.as_mut(), a.seed) {
        s.seed = seed;
    }
    let mat = cfg.materialize()?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let hash = cfg.config_hash();
    let trips = dataset_to_trips(&mat.dataset, &mat.map)?;

    let mut f = create(&a.out.join("trips.csv"))?;
    writeln!(f, "{}{hash}", report::HASH_PREFIX).map_err(|e| io_err(&a.out, e))?;
    write_trips(f, &trips)?;
    let mut f = create(&a.out.join("regions.csv"))?;
    writeln!(f, "{}{hash}", report::HASH_PREFIX).map_err(|e| io_err(&a.out, e))?;
    mat.map.write_csv(f)?;

    fs::write(a.out.join("config.toml"), cfg.to_toml_string()?).map_err(|e| io_err(&a.out, e))?;
    let mut from_files = cfg.clone();
    from_files.data.synthetic = None;
    from_files.data.trips = Some("trips.csv".into());
    from_files.data.regions = Some("regions.csv".into());
    fs::write(a.out.join("config-trips.toml"), from_files.to_toml_string()?).map_err(|e| io_err(&a.out, e))?;
    println!(
        "wrote {} trips over {} days, {} regions, {} operators to {}",
        trips.len(),
        mat.dataset.days,
        mat.dataset.regions,
        mat.dataset.num_operators(),
        a.out.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Outcome {
    let mut runs = Vec::new();
    for input in &a.inputs {
        let (name, path) = if input.is_dir() {
            let name = input.file_name().map_or_else(|| input.display().to_string(), |s| s.to_string_lossy().into());
            (name, input.join("iterations.csv"))
        } else {
            let name = input.file_stem().map_or_else(|| input.display().to_string(), |s| s.to_string_lossy().into());
            (name, input.clone())
        };
        let text = fs::read_to_string(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        runs.push((name, text));
    }
    report::merge_tables(create(&a.out)?, &runs)?;
    println!("merged {} tables into {}", runs.len(), a.out.display());
    Ok(())
}
