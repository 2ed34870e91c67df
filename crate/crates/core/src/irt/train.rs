use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_grads, dataset_items, embedding_matrix, irt_loss, IrtModel, PairItem, ScoreItem,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnkernel::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrtConfig {
    pub identity_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// Weight of the mean per-model KL term. `None` uses `models / items`,
    /// which makes the objective the per-datum evidence lower bound.
    pub kl_weight: Option<f64>,
    /// Initial posterior log-variance of every identity.
    pub init_log_var: f64,
    /// Share of comparison items per batch; `None` follows the data sizes.
    pub pair_fraction: Option<f64>,
    pub seed: u64,
}

impl Default for IrtConfig {
    fn default() -> Self {
        IrtConfig {
            identity_dim: 32,
            hidden: vec![256, 256],
            epochs: 10,
            batch_size: 256,
            lr: 1e-3,
            lr_decay: 0.95,
            kl_weight: None,
            init_log_var: -4.0,
            pair_fraction: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrtTrainReport {
    pub kl_weight: f64,
    /// Full-data loss before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Full-data loss after the last epoch.
    pub final_loss: f64,
}

/// Cycles through a list in freshly shuffled order.
struct Cursor<T> {
    items: Vec<T>,
    pos: usize,
}

impl<T: Copy> Cursor<T> {
    fn new(items: Vec<T>) -> Self {
        let pos = items.len();
        Cursor { items, pos }
    }

    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<T>) {
        for _ in 0..n {
            if self.pos == self.items.len() {
                self.items.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.items[self.pos]);
            self.pos += 1;
        }
    }
}

pub fn train_irt(dataset: &Dataset, config: &IrtConfig) -> Result<(IrtModel, IrtTrainReport)> {
    dataset.validate()?;
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ids: Vec<String> = dataset.models.iter().map(|m| m.model_id.clone()).collect();
    let mut model = IrtModel::new(
        dataset.embedding_dim(),
        config.identity_dim,
        &config.hidden,
        &ids,
        config.init_log_var,
        &mut rng,
    )?;
    let emb = embedding_matrix(dataset);
    let (scores, pairs) = dataset_items(&model, dataset)?;
    let (ns, np) = (scores.len(), pairs.len());
    if ns + np == 0 {
        return Err(Error::invalid("no scores or comparisons to train on"));
    }
    let pair_fraction = match (ns, np) {
        (0, _) => 1.0,
        (_, 0) => 0.0,
        _ => config
            .pair_fraction
            .unwrap_or(np as f64 / (ns + np) as f64)
            .clamp(0.0, 1.0),
    };

    let kl_weight = config
        .kl_weight
        .unwrap_or(model.identities.len() as f64 / (ns + np) as f64);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let initial_loss = irt_loss(
        &model,
        emb.view(),
        &scores,
        &pairs,
        kl_weight,
        &mut eval_rng,
    )?
    .0
    .total;

    let steps = (ns + np).div_ceil(config.batch_size);
    let mut score_cursor = Cursor::new(scores.clone());
    let mut pair_cursor = Cursor::new(pairs.clone());
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut sb: Vec<ScoreItem> = Vec::with_capacity(config.batch_size);
    let mut pb: Vec<PairItem> = Vec::with_capacity(config.batch_size);
    let per_batch = pair_fraction * config.batch_size as f64;
    for epoch in 0..config.epochs {
        adam.config.lr = config.lr * config.lr_decay.powi(epoch as i32);
        let mut total = 0.0;
        for step in 0..steps {
            let n_pair = ((per_batch * (step + 1) as f64).round()
                - (per_batch * step as f64).round()) as usize;
            sb.clear();
            pb.clear();
            score_cursor.take(config.batch_size - n_pair, &mut rng, &mut sb);
            pair_cursor.take(n_pair, &mut rng, &mut pb);
            let (loss, grads) = irt_loss(&model, emb.view(), &sb, &pb, kl_weight, &mut rng)
                .map_err(|e| Error::Divergence(format!("epoch {epoch} step {step}: {e}")))?;
            apply_grads(&mut model, &grads, &mut adam)
                .map_err(|e| Error::Divergence(format!("epoch {epoch} step {step}: {e}")))?;
            total += loss.total;
        }
        let mean = total / steps as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch} loss {mean}")));
        }
        epoch_losses.push(mean);
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let final_loss = irt_loss(
        &model,
        emb.view(),
        &scores,
        &pairs,
        kl_weight,
        &mut eval_rng,
    )?
    .0
    .total;
    Ok((
        model,
        IrtTrainReport {
            kl_weight,
            initial_loss,
            epoch_losses,
            final_loss,
        },
    ))
}
