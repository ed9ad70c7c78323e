//! Run configuration files and their content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{defaults, SimConfig};
use crate::error::{Error, Result};
use crate::ingest::{build_demand, parse_trips, synth_demand, DemandDataset, RegionMap, SynthConfig};
use crate::metrics::CityGoalSpec;
use crate::orchestrator::{RegulatorConfig, TrainConfig, Variant};

/// Simulation settings; region and operator counts come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
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
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::truck_capacity")]
    pub truck_capacity: u64,
    pub goals: CityGoalSpec,
    /// Explicit inter-region distances; derived from the region centroids
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<Vec<Vec<f64>>>,
}

/// Synthetic demand plus the region centroids it is laid out on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSection {
    #[serde(default)]
    pub seed: u64,
    /// `[lon, lat]` per region.
    pub centroids: Vec<[f64; 2]>,
    #[serde(flatten)]
    pub spec: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Trip CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trips: Option<PathBuf>,
    /// Region centroid CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    /// Half-open day ranges `[start, end)` relative to the first data day.
    pub train_days: [usize; 2],
    pub eval_days: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub sim: SimSection,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub regulator: RegulatorConfig,
}

fn default_variant() -> Variant {
    Variant::Full
}

/// Loaded data and the simulation config that fits it.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub sim: SimConfig,
    pub dataset: DemandDataset,
    pub map: RegionMap,
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.trips, &mut cfg.data.regions].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.trips, &d.regions, &d.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            (Some(_), None, None) => return Err(config_err("data.regions", "trip data needs a region centroid file")),
            (None, Some(_), None) => return Err(config_err("data.trips", "region file given without trip data")),
            (None, None, None) => {
                return Err(config_err("data.trips", "no demand source: give trips + regions or a synthetic section"))
            }
            _ => return Err(config_err("data.synthetic", "give either trip files or a synthetic section, not both")),
        }
        for (name, r) in [("data.train_days", d.train_days), ("data.eval_days", d.eval_days)] {
            if r[0] >= r[1] {
                return Err(config_err(name, format!("empty day range {r:?}")));
            }
        }
        if let Some(s) = &d.synthetic {
            s.spec.validate()?;
            if s.centroids.len() != s.spec.regions {
                return Err(config_err("data.synthetic.centroids", "one centroid per region"));
            }
            if s.spec.slots_per_day != self.sim.slots_per_day {
                return Err(config_err("data.synthetic.slots_per_day", "must match sim.slots_per_day"));
            }
        }
        if self.sim.fleet_sizes.is_empty() {
            return Err(config_err("sim.fleet_sizes", "need one fleet size per operator"));
        }
        self.sim.goals.validate()?;
        self.train.validate()
    }

    /// Hex digest of everything that determines training results. The
    /// variant and output directory are excluded so one checkpoint can be
    /// evaluated under several variants.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            seed: u64,
            sim: &'a SimSection,
            data: &'a DataSection,
            train: &'a TrainConfig,
            regulator: &'a RegulatorConfig,
        }
        let body = serde_json::to_vec(&Hashed {
            seed: self.seed,
            sim: &self.sim,
            data: &self.data,
            train: &self.train,
            regulator: &self.regulator,
        })
        .expect("config serializes");
        hex::encode(&Sha256::digest(&body)[..8])
    }

    /// Loads or generates the demand data and derives the simulation config.
    pub fn materialize(&self) -> Result<Materialized> {
        let (dataset, map) = match (&self.data.trips, &self.data.regions, &self.data.synthetic) {
            (Some(trips), Some(regions), _) => {
                let map = RegionMap::from_csv(
                    fs::File::open(regions)
                        .map_err(|e| config_err("data.regions", format!("{}: {e}", regions.display())))?,
                )?;
                let parsed = parse_trips(
                    fs::File::open(trips).map_err(|e| config_err("data.trips", format!("{}: {e}", trips.display())))?,
                )?;
                if parsed.skipped > 0 {
                    log::warn!("skipped {} malformed trip rows", parsed.skipped);
                }
                let ds = build_demand(&parsed.trips, &map, self.sim.slots_per_day, None)?;
                (ds, map)
            }
            (_, _, Some(s)) => {
                let map = RegionMap::new(s.centroids.iter().map(|c| (c[0], c[1])).collect())?;
                (synth_demand(&s.spec, s.seed)?, map)
            }
            _ => unreachable!("validated demand source"),
        };
        let end = self.data.train_days[1].max(self.data.eval_days[1]);
        if end > dataset.days {
            return Err(config_err(
                "data.eval_days",
                format!("day ranges reach day {end} but the data covers {} days", dataset.days),
            ));
        }
        if dataset.num_operators() != self.sim.fleet_sizes.len() {
            return Err(config_err(
                "sim.fleet_sizes",
                format!(
                    "{} fleet sizes for {} operators in the data",
                    self.sim.fleet_sizes.len(),
                    dataset.num_operators()
                ),
            ));
        }
        let distance_km = match &self.sim.distance_km {
            Some(d) => d.clone(),
            None => map.distance_matrix_km(),
        };
        let s = &self.sim;
        let sim = SimConfig {
            regions: dataset.regions,
            operators: dataset.num_operators(),
            fleet_sizes: s.fleet_sizes.clone(),
            slots_per_day: s.slots_per_day,
            rebalance_every: s.rebalance_every,
            horizon: s.horizon,
            unlock_fee: s.unlock_fee,
            per_minute_fee: s.per_minute_fee,
            alpha: s.alpha,
            truck_capacity: s.truck_capacity,
            distance_km,
            goals: s.goals,
        };
        sim.validate()?;
        self.regulator.validate(sim.regions)?;
        Ok(Materialized { sim, dataset, map })
    }
}
