//! Supervised warm start: imitate the calibrated-predictor choice between the
//! two models of each recorded comparison.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    preferred_action, CandidateContext, PolicyConfig, Preference, RoutingPolicy, RoutingTable,
    ValueNet,
};
use crate::data::normalize_max;
use crate::error::{Error, Result};
use crate::irt::CalibrationParams;
use crate::nnkernel::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub use_predicted_scores: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 500,
            batch_size: 1024,
            lr: 1e-3,
            omega_min: 0.0,
            omega_max: 2.0,
            use_predicted_scores: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
}

/// Position (0 for `a`, 1 for `b`) of the better model under `pref`, judged
/// by calibrated and set-normalized predicted scores and normalized costs.
pub fn pretrain_target(
    table: &RoutingTable,
    calib: &CalibrationParams,
    prompt: usize,
    a: usize,
    b: usize,
    pref: Preference,
) -> usize {
    let cal = [
        calib.apply(table.logits[[prompt, a]]),
        calib.apply(table.logits[[prompt, b]]),
    ];
    let scores = normalize_max(&cal);
    let costs = normalize_max(&table.raw_costs(&[a, b]));
    let ids = [
        table.pool[a].model_id.as_str(),
        table.pool[b].model_id.as_str(),
    ];
    preferred_action(&scores, &costs, &ids, pref)
}

/// One Adam step on the mean negative log-likelihood of the targets.
/// `batch` holds `(prompt, model a, model b)` triples.
pub fn pretrain_step(
    policy: &mut RoutingPolicy,
    adam: &mut Adam,
    table: &RoutingTable,
    calib: &CalibrationParams,
    batch: &[(usize, usize, usize)],
    omegas: &[f64],
    use_predicted_scores: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty pretraining batch"));
    }
    let mut emb = Array2::zeros((batch.len(), table.embeddings.ncols()));
    let mut ctxs: Vec<CandidateContext> = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (i, (&(n, a, b), &w)) in batch.iter().zip(omegas).enumerate() {
        emb.row_mut(i).assign(&table.embeddings.row(n));
        ctxs.push(table.context(n, &[a, b], use_predicted_scores)?);
        targets.push(pretrain_target(table, calib, n, a, b, Preference::new(w)?));
    }
    let refs: Vec<&CandidateContext> = ctxs.iter().collect();
    let (out, cache) = policy.forward(emb.view(), &refs, omegas)?;
    let bsz = batch.len() as f64;
    let mut loss = 0.0;
    let grads: Vec<Vec<f64>> = out
        .probs
        .iter()
        .zip(&targets)
        .map(|(p, &t)| {
            loss -= p[t].max(f64::MIN_POSITIVE).ln();
            p.iter()
                .enumerate()
                .map(|(k, &pk)| (pk - f64::from(u8::from(k == t))) / bsz)
                .collect()
        })
        .collect();
    let g = policy.backward(&cache, &grads)?;
    let gs = g.slices();
    adam.step(&mut policy.params_mut(), &gs)?;
    Ok(loss / bsz)
}

/// Builds a fresh policy and value net and pretrains the policy on
/// `comparisons`, given as `(prompt, model a, model b)` positions in `table`.
pub fn pretrain_policy(
    table: &RoutingTable,
    comparisons: &[(usize, usize, usize)],
    calib: &CalibrationParams,
    policy_config: &PolicyConfig,
    config: &PretrainConfig,
) -> Result<(RoutingPolicy, ValueNet, PretrainReport)> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(policy_config.seed);
    let identity_dim = table.pool[0].identity.len();
    let mut policy = RoutingPolicy::new(
        table.embeddings.ncols(),
        identity_dim,
        policy_config.hidden,
        &mut init_rng,
    )?;
    let value = ValueNet::new(
        table.embeddings.ncols(),
        policy_config.hidden,
        policy_config.hidden,
        &mut init_rng,
    )?;
    let mut losses = Vec::with_capacity(config.steps);
    if config.steps == 0 {
        return Ok((policy, value, PretrainReport { losses }));
    }
    if comparisons.is_empty() {
        return Err(Error::invalid(
            "pretraining needs comparisons between pool models",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut omegas = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        omegas.clear();
        for _ in 0..config.batch_size {
            batch.push(comparisons[rng.random_range(0..comparisons.len())]);
            omegas.push(rng.random_range(config.omega_min..=config.omega_max));
        }
        let loss = pretrain_step(
            &mut policy,
            &mut adam,
            table,
            calib,
            &batch,
            &omegas,
            config.use_predicted_scores,
        )
        .map_err(|e| Error::Divergence(format!("pretraining step {step}: {e}")))?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "pretraining step {step}: loss {loss}"
            )));
        }
        losses.push(loss);
    }
    Ok((policy, value, PretrainReport { losses }))
}
