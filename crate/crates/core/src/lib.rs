//! Multi-operator micromobility fleet rebalancing under city regulation.
//!
//! Operators learn truck rebalancing policies; a city regulator assigns
//! per-operator scores (penalties or subsidies) from Shapley contributions to
//! city-wide goals and tunes its scoring model by stochastic perturbation.

pub mod apportion;
pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod env;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod regulator;
pub mod report;
pub mod scalar;
pub mod scenario;
pub mod scheduler;

pub use domain::{DemandTensor, SatisfiedDemand, VehicleDistribution};
pub use env::{Env, RebalanceAction, SimConfig, SimState, Snapshot, StepOutcome};
pub use error::{Error, Result};
pub use ingest::{DemandDataset, HistoricalMeanPredictor, RegionMap, SynthConfig, TripRecord};
pub use metrics::{CityGoalSpec, FairnessValue, GoalDistance};
pub use nn::{Adam, Mlp, Sgd};
pub use scalar::{Real, Scalar};

pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type GoalDistance64 = GoalDistance<f64>;
