//! Glue from a run config to training and evaluation runs.

use std::sync::Arc;

use crate::config::RunConfig;
use crate::error::Result;
use crate::ingest::{DemandDataset, HistoricalMeanPredictor, RegionMap};
use crate::orchestrator::{evaluate, train_with, EvalSetup, Evaluation, IterationReport, PolicySet, TrainOutcome, TrainSetup, Variant};
use crate::scheduler::demand_shares;
use crate::env::SimConfig;

/// A run config with its data loaded and split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub config_hash: String,
    pub sim: Arc<SimConfig>,
    pub dataset: Arc<DemandDataset>,
    pub map: RegionMap,
    pub train_data: Arc<DemandDataset>,
    pub eval_data: Arc<DemandDataset>,
    pub predictor: Arc<HistoricalMeanPredictor>,
    /// Training-period origin-demand shares `[m][i]`.
    pub shares: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(config: RunConfig) -> Result<Self> {
        let mat = config.materialize()?;
        let [t0, t1] = config.data.train_days;
        let [e0, e1] = config.data.eval_days;
        let train_data = mat.dataset.slice_days(t0..t1)?;
        let eval_data = mat.dataset.slice_days(e0..e1)?;
        let predictor = HistoricalMeanPredictor::fit(&mat.dataset, t0..t1);
        let shares = mat
            .dataset
            .origin_totals_over(t0..t1)
            .iter()
            .map(|row| demand_shares(row))
            .collect();
        Ok(Self {
            config_hash: config.config_hash(),
            config,
            sim: Arc::new(mat.sim),
            dataset: Arc::new(mat.dataset),
            map: mat.map,
            train_data: Arc::new(train_data),
            eval_data: Arc::new(eval_data),
            predictor: Arc::new(predictor),
            shares,
        })
    }

    pub fn train_setup(&self, variant: Variant) -> TrainSetup {
        TrainSetup {
            sim: self.sim.clone(),
            data: self.train_data.clone(),
            predictor: self.predictor.clone(),
            train: self.config.train.clone(),
            regulator: self.config.regulator.clone(),
            variant,
            seed: self.config.seed,
        }
    }

    pub fn eval_setup(&self) -> EvalSetup {
        EvalSetup {
            sim: self.sim.clone(),
            data: self.eval_data.clone(),
            predictor: self.predictor.clone(),
            regulator: self.config.regulator.clone(),
            shares: self.shares.clone(),
            seed: self.config.seed,
        }
    }

    pub fn train(&self, variant: Variant, on_iteration: impl FnMut(&IterationReport)) -> Result<TrainOutcome> {
        train_with(&self.train_setup(variant), on_iteration)
    }

    pub fn evaluate(&self, policies: Option<&PolicySet>, variant: Variant) -> Result<Evaluation> {
        evaluate(&self.eval_setup(), policies, variant)
    }

    pub fn operator_labels(&self) -> &[String] {
        &self.dataset.operators
    }
}
