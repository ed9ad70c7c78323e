use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 7
variant = "full"

[sim]
fleet_sizes = [6, 4]
goals = { q_sat = 0.9, q_equ = -1.0 }

[data]
train_days = [0, 1]
eval_days = [1, 2]

[data.synthetic]
seed = 3
centroids = [[-87.63, 41.88], [-87.65, 41.90], [-87.70, 41.95]]
regions = 3
operators = 2
days = 2
rates = [[[0.4, 0.3, 0.1], [0.3, 0.4, 0.1], [0.3, 0.2, 0.1]], [[0.2, 0.2, 0.1], [0.2, 0.2, 0.1], [0.2, 0.1, 0.1]]]
profile = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
durations_s = [[600.0, 900.0, 1200.0], [900.0, 600.0, 1200.0], [1200.0, 1200.0, 600.0]]

[train]
n_iter = 3
hidden = [8]
minibatch = 4
updates_per_iteration = 2

[regulator]
hidden = [4]
warm_start_samples = 32
warm_start_epochs = 5
priority_regions = [2]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fleetreg"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn train(dir: &Path, config: &Path, out: &str) -> PathBuf {
    let out = dir.join(out);
    let o = run(bin().args(["train", "--config"]).arg(config).args(["--seed", "7", "--out"]).arg(&out));
    assert!(o.status.success(), "train failed: {}", stderr(&o));
    out
}

/// Parses a report table, checking the hash comment and header.
fn table(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let hash = lines
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .expect("hash comment line")
        .to_string();
    let header: Vec<String> = lines.next().expect("header").split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (hash, header, rows)
}

#[test]
fn train_writes_checkpoint_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = train(dir.path(), &cfg, "a");
    let b = train(dir.path(), &cfg, "b");
    for f in ["config.toml", "agents.json", "regulator.json", "iterations.csv", "timing.csv", "summary.json"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let (hash, header, rows) = table(&a.join("iterations.csv"));
    assert_eq!(hash.len(), 16);
    assert_eq!(header[0], "iteration");
    assert_eq!(rows.len(), 3);
    assert_eq!(
        fs::read(a.join("iterations.csv")).unwrap(),
        fs::read(b.join("iterations.csv")).unwrap()
    );
    assert_eq!(fs::read(a.join("agents.json")).unwrap(), fs::read(b.join("agents.json")).unwrap());
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = TINY.split("[data.synthetic]").next().unwrap().replace(
        "train_days = [0, 1]",
        "trips = \"missing.csv\"\nregions = \"missing-regions.csv\"\ntrain_days = [0, 1]",
    );
    fs::write(&path, text).unwrap();
    let o = run(bin().args(["train", "--config"]).arg(&path).arg("--out").arg(dir.path().join("o")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.regions"), "{}", stderr(&o));

    let cfg = tiny_config(dir.path());
    let o = run(bin().args(["train", "--config"]).arg(&cfg).args(["--variant", "bogus"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["train", "--config"]).arg(&cfg).args(["--variant", "sdsm"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["train", "--config"]).arg(dir.path().join("nope.toml")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_variants_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ck = train(dir.path(), &cfg, "ck");

    let out = dir.path().join("sdsm");
    let o = run(bin().arg("evaluate").arg("--checkpoint").arg(&ck).args(["--variant", "sdsm", "--out"]).arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, header, rows) = table(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "SDSM");
    for f in ["daily.csv", "regional.csv", "regulator.csv"] {
        let (h, _, rows) = table(&out.join(f));
        assert_eq!(h.len(), 16);
        assert!(!rows.is_empty(), "{f} is empty");
    }

    let out = dir.path().join("noreg");
    let o = run(bin()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(&ck)
        .args(["--variant", "no-regulation", "--out"])
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, header_nr, rows) = table(&out.join("metrics.csv"));
    assert_eq!(header, header_nr);
    for (h, v) in header_nr.iter().zip(&rows[0]) {
        if h.starts_with("score_") && h != "score_ratio_std" {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{h}");
        }
    }

    // Same seed and config evaluate to identical bytes.
    let again = dir.path().join("noreg2");
    run(bin()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(&ck)
        .args(["--variant", "no-regulation", "--out"])
        .arg(&again));
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());

    let o = run(bin().arg("evaluate").arg("--checkpoint").arg(&ck).arg("--config").arg(&cfg).args(["--seed", "8"]));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run(bin().arg("evaluate").arg("--checkpoint").arg(&ck).arg("--config").arg(&cfg).args([
        "--seed",
        "7",
        "--out",
    ])
    .arg(dir.path().join("full")));
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn evaluate_missing_or_tampered_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().arg("evaluate").arg("--checkpoint").arg(dir.path().join("none")));
    assert_eq!(o.status.code(), Some(3));

    let cfg = tiny_config(dir.path());
    let ck = train(dir.path(), &cfg, "ck");
    let stored = fs::read_to_string(ck.join("config.toml")).unwrap();
    fs::write(ck.join("config.toml"), stored.replace("seed = 7", "seed = 9")).unwrap();
    let o = run(bin().arg("evaluate").arg("--checkpoint").arg(&ck));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn counts(dir: &Path, name: &str, rows: &[(usize, usize, u64)]) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::from("operator,region,count\n");
    for (m, i, c) in rows {
        text.push_str(&format!("{m},{i},{c}\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

fn shapley(state: &Path, demand: &Path) -> (Vec<(f64, f64)>, f64) {
    let o = run(bin().arg("shapley").arg("--state").arg(state).arg("--demand").arg(demand));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut phi = Vec::new();
    let mut residual = f64::NAN;
    for line in text.lines().skip(1) {
        if let Some(r) = line.strip_prefix("efficiency residual: ") {
            residual = r.parse().unwrap();
        } else {
            let parts: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            phi.push((parts[1], parts[2]));
        }
    }
    (phi, residual)
}

#[test]
fn shapley_symmetry_dummy_and_residual() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let state = counts(d, "s.csv", &[(0, 0, 3), (0, 1, 1), (1, 0, 3), (1, 1, 1)]);
    let demand = counts(d, "d.csv", &[(0, 0, 5), (0, 1, 2), (1, 0, 5), (1, 1, 2)]);
    let (phi, residual) = shapley(&state, &demand);
    assert_eq!(phi.len(), 2);
    assert!((phi[0].0 - phi[1].0).abs() < 1e-12 && (phi[0].1 - phi[1].1).abs() < 1e-12);
    assert!(residual <= 1e-9);

    // Operator 1 owns nothing and serves nobody.
    let state = counts(d, "s2.csv", &[(0, 0, 3), (0, 1, 1), (1, 0, 0)]);
    let demand = counts(d, "d2.csv", &[(0, 0, 5), (0, 1, 2), (1, 1, 0)]);
    let (phi, residual) = shapley(&state, &demand);
    assert_eq!(phi[1], (0.0, 0.0));
    assert!(residual <= 1e-9);

    let bad = d.join("bad.csv");
    fs::write(&bad, "operator,region,count\n0,x,3\n").unwrap();
    let o = run(bin().arg("shapley").arg("--state").arg(&bad).arg("--demand").arg(&demand));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().arg("shapley").arg("--state").arg(d.join("absent.csv")).arg("--demand").arg(&demand));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_then_train_from_files_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("data");
    let o = run(bin().arg("synth").arg("--config").arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let trips = fs::read_to_string(out.join("trips.csv")).unwrap();
    assert!(trips.starts_with("# config_hash="));
    assert!(out.join("regions.csv").is_file() && out.join("config.toml").is_file());

    let ck = train(dir.path(), &out.join("config-trips.toml"), "from-files");
    let ck2 = train(dir.path(), &cfg, "from-synth");
    let merged = dir.path().join("merged.csv");
    let o = run(bin().arg("report").arg(&ck).arg(ck2.join("iterations.csv")).arg("--out").arg(&merged));
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, header, rows) = table(&merged);
    assert_eq!(header[0], "run");
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0], "from-files");
    assert_eq!(rows[3][0], "iterations");
}

#[test]
fn synth_default_is_desk_city() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("desk");
    let o = run(bin().arg("synth").args(["--seed", "1", "--out"]).arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("6 regions, 3 operators"));
    let regions = fs::read_to_string(out.join("regions.csv")).unwrap();
    assert_eq!(regions.lines().count(), 8);
}

#[test]
fn bad_thread_count_is_input_error() {
    let o = run(bin().env("REALISM_THREADS", "zero").args(["report", "x.csv"]));
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .env("REALISM_THREADS", "1")
        .arg("synth")
        .arg("--config")
        .arg(tiny_config(dir.path()))
        .arg("--out")
        .arg(dir.path().join("s")));
    assert!(o.status.success(), "{}", stderr(&o));
}
