//! Checkpoint directories.
//!
//! Layout:
//! - `config.toml`: the run config
//! - `agents.json`: operator agent parameters
//! - `regulator.json`: score model parameters
//! - `iterations.csv`, `timing.csv`: training tables
//! - `summary.json`: which iteration was kept and whether training converged
//!
//! Both parameter files carry the config hash; loading fails when either
//! disagrees with the stored config or with the config a caller expects.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::orchestrator::{PolicySet, TrainOutcome, Variant};
use crate::regulator::ScoreModel;
use crate::report::{write_iterations, write_timing};
use crate::scheduler::Agent;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct AgentsFile {
    version: u32,
    config_hash: String,
    agents: Vec<Vec<Agent<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct RegulatorFile {
    version: u32,
    config_hash: String,
    score_model: ScoreModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub config_hash: String,
    pub variant: Variant,
    pub iterations: usize,
    pub best_iteration: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub policies: PolicySet,
    pub summary: Summary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn check(version: u32, hash: &str, expected: &str) -> Result<()> {
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    if hash != expected {
        return Err(Error::HashMismatch {
            checkpoint: hash.to_string(),
            config: expected.to_string(),
        });
    }
    Ok(())
}

/// Writes the selected policies of a training run.
pub fn save(dir: &Path, config: &RunConfig, labels: &[String], outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let hash = config.config_hash();
    fs::write(dir.join("config.toml"), config.to_toml_string()?)?;
    write_json(
        &dir.join("agents.json"),
        &AgentsFile {
            version: CHECKPOINT_VERSION,
            config_hash: hash.clone(),
            agents: outcome.best_policies.agents.clone(),
        },
    )?;
    write_json(
        &dir.join("regulator.json"),
        &RegulatorFile {
            version: CHECKPOINT_VERSION,
            config_hash: hash.clone(),
            score_model: outcome.best_policies.score_model.clone(),
        },
    )?;
    write_iterations(fs::File::create(dir.join("iterations.csv"))?, &hash, labels, &outcome.reports)?;
    write_timing(fs::File::create(dir.join("timing.csv"))?, &hash, &outcome.reports)?;
    write_json(
        &dir.join("summary.json"),
        &Summary {
            version: CHECKPOINT_VERSION,
            config_hash: hash,
            variant: config.variant,
            iterations: outcome.reports.len(),
            best_iteration: outcome.best_iteration,
            converged: outcome.converged,
        },
    )
}

/// Reads a checkpoint and checks its parts against its own config.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join("config.toml"))?;
    let config = RunConfig::from_toml_str(&text)?;
    let hash = config.config_hash();
    let agents: AgentsFile = read_json(&dir.join("agents.json"))?;
    check(agents.version, &agents.config_hash, &hash)?;
    let regulator: RegulatorFile = read_json(&dir.join("regulator.json"))?;
    check(regulator.version, &regulator.config_hash, &hash)?;
    let summary: Summary = read_json(&dir.join("summary.json"))?;
    check(summary.version, &summary.config_hash, &hash)?;
    Ok(Checkpoint {
        config,
        policies: PolicySet {
            agents: agents.agents,
            score_model: regulator.score_model,
        },
        summary,
    })
}

/// [`load`], additionally requiring the checkpoint to match `expected`.
pub fn load_matching(dir: &Path, expected: &RunConfig) -> Result<Checkpoint> {
    let ck = load(dir)?;
    check(CHECKPOINT_VERSION, &ck.summary.config_hash, &expected.config_hash())?;
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::desk_config;

    fn tiny_run() -> (RunConfig, TrainOutcome) {
        let mut cfg = desk_config(5);
        cfg.variant = Variant::NoRegulation;
        cfg.train.n_iter = 2;
        cfg.train.min_iterations = 0;
        cfg.train.updates_per_iteration = 1;
        cfg.data.train_days = [0, 1];
        let prep = crate::experiment::Prepared::new(cfg.clone()).unwrap();
        let out = prep.train(Variant::NoRegulation, |_| {}).unwrap();
        (cfg, out)
    }

    #[test]
    fn round_trip_and_hash_checks() {
        let (cfg, out) = tiny_run();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &cfg, &["a".into(), "b".into(), "c".into()], &out).unwrap();
        let ck = load(dir.path()).unwrap();
        assert!(ck.policies == out.best_policies, "parameters survive the round trip");
        assert_eq!(ck.summary.iterations, 2);
        assert!(load_matching(dir.path(), &cfg).is_ok());

        let mut other = cfg.clone();
        other.seed += 1;
        assert!(matches!(load_matching(dir.path(), &other), Err(Error::HashMismatch { .. })));

        // Editing the stored config breaks the link to the parameters.
        fs::write(dir.path().join("config.toml"), other.to_toml_string().unwrap()).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn rejects_unknown_version() {
        let (cfg, out) = tiny_run();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &cfg, &["a".into(), "b".into(), "c".into()], &out).unwrap();
        let path = dir.path().join("agents.json");
        let text = fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 9", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::CheckpointVersion(9))));
    }
}
