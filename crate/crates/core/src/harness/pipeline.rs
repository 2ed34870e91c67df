//! End-to-end training of the item-response model and routing policy on one
//! benchmark.

use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::irt::{
    platt_calibrate, train_irt, CalibrationParams, IrtConfig, IrtModel, IrtTrainReport,
};
use crate::policy::{
    pretrain_policy, train_policy, PolicyConfig, PolicyTrainLog, PoolModel, PpoConfig,
    PretrainConfig, RoutingPolicy, RoutingTable, ValueNet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train_fraction: f64,
    pub split_seed: u64,
    pub irt: IrtConfig,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub ppo: PpoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_fraction: 0.8,
            split_seed: 0,
            irt: IrtConfig::default(),
            policy: PolicyConfig::default(),
            pretrain: PretrainConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Applies one seed to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.irt.seed = seed;
        self.policy.seed = seed;
        self.pretrain.seed = seed;
        self.ppo.seed = seed;
        self
    }
}

#[derive(Clone, Debug)]
pub struct TrainedStack {
    pub train: Dataset,
    pub test: Dataset,
    pub irt: IrtModel,
    pub irt_report: IrtTrainReport,
    pub calibration: CalibrationParams,
    pub policy: RoutingPolicy,
    pub value: ValueNet,
    pub pool: Vec<String>,
    pub ppo_log: PolicyTrainLog,
}

impl TrainedStack {
    /// Routing table over the test split for the given models.
    pub fn test_table(&self, models: &[String]) -> Result<RoutingTable> {
        RoutingTable::build(
            &self.irt,
            &self.test,
            PoolModel::from_irt(&self.irt, &self.test, models)?,
        )
    }
}

/// Comparisons of `dataset` between models of `table`'s pool, as
/// `(prompt, a, b)` positions. `table` must be built over `dataset`.
pub fn comparisons_in(table: &RoutingTable, dataset: &Dataset) -> Vec<(usize, usize, usize)> {
    let pi = dataset.prompt_index();
    dataset
        .pairwise
        .iter()
        .filter_map(|c| {
            Some((
                *pi.get(c.prompt_id.as_str())?,
                table.model_position(&c.model_a)?,
                table.model_position(&c.model_b)?,
            ))
        })
        .collect()
}

/// Pretrains a fresh policy on the comparisons of `train` among `pool`.
pub fn pretrain_from_split(
    irt: &IrtModel,
    calibration: &CalibrationParams,
    train: &Dataset,
    pool: &[String],
    config: &PipelineConfig,
) -> Result<(RoutingPolicy, ValueNet, RoutingTable)> {
    let table = RoutingTable::build(irt, train, PoolModel::from_irt(irt, train, pool)?)?;
    let comparisons = comparisons_in(&table, train);
    let (policy, value, _) = pretrain_policy(
        &table,
        &comparisons,
        calibration,
        &config.policy,
        &config.pretrain,
    )?;
    Ok((policy, value, table))
}

/// Splits prompts, trains and calibrates the item-response model on the
/// training side, then pretrains and trains the policy over `pool`.
pub fn train_full_stack(
    dataset: &Dataset,
    pool: &[String],
    config: &PipelineConfig,
) -> Result<TrainedStack> {
    if pool.len() < 2 {
        return Err(Error::invalid("the model pool needs at least two models"));
    }
    let (train, test) = split(dataset, config.train_fraction, config.split_seed)?;
    let (irt, irt_report) = train_irt(&train, &config.irt)?;
    let calibration = if train.pairwise.is_empty() {
        CalibrationParams::default()
    } else {
        platt_calibrate(&irt, &train)?
    };
    let (policy, value, table) = pretrain_from_split(&irt, &calibration, &train, pool, config)?;
    let (policy, value, ppo_log) = train_policy(policy, value, &table, &config.ppo)?;
    Ok(TrainedStack {
        train,
        test,
        irt,
        irt_report,
        calibration,
        policy,
        value,
        pool: pool.to_vec(),
        ppo_log,
    })
}
