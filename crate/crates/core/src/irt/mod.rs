//! Variational item-response model.
//!
//! Each model carries a diagonal Gaussian posterior over an identity vector.
//! A shared backbone reads `[prompt embedding, identity]`; the score head `f`
//! predicts the logit of a correct answer and the pairwise head `g` produces
//! strengths whose difference is the log-odds of one model beating another.

mod platt;
mod train;

use std::collections::{BTreeSet, HashMap};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::nnkernel::{sigmoid, Activation, DenseNet, Gradients, NetRecord, SCHEMA_VERSION};
use crate::real17;

pub use platt::{fit_platt, platt_calibrate, CalibrationParams};
pub use train::{train_irt, IrtConfig, IrtTrainReport};

/// Probabilities entering a cross-entropy are clamped to this distance from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityVector {
    pub model_id: String,
    #[serde(with = "real17::vec")]
    pub mean: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub log_var: Vec<f64>,
}

impl IdentityVector {
    /// The standard normal prior.
    pub fn prior(model_id: impl Into<String>, dim: usize) -> Self {
        IdentityVector {
            model_id: model_id.into(),
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `KL(N(mean, diag(exp(log_var))) ‖ N(0, I))`.
    pub fn kl(&self) -> f64 {
        kl_diag(&self.mean, &self.log_var)
    }

    /// `mean + exp(log_var / 2) * eps`.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }
}

pub fn kl_diag(mean: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Binary cross-entropy with the probability clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce`] with respect to the logit of `p`; zero where the clamp is active.
pub(crate) fn bce_logit_grad(y: f64, p: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        0.0
    } else {
        p - y
    }
}

/// `sigmoid(d)` evaluated so that `pair_prob(d) + pair_prob(-d) == 1` exactly.
pub fn pair_prob(d: f64) -> f64 {
    if d >= 0.0 {
        sigmoid(d)
    } else {
        1.0 - sigmoid(-d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrtModel {
    pub embedding_dim: usize,
    pub backbone: DenseNet,
    pub f_head: DenseNet,
    pub g_head: DenseNet,
    pub identities: Vec<IdentityVector>,
}

/// One binary score observation, indexing prompts and identities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreItem {
    pub prompt: usize,
    pub model: usize,
    pub y: f64,
}

/// One comparison; `z = 1` when `a` won.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairItem {
    pub prompt: usize,
    pub a: usize,
    pub b: usize,
    pub z: f64,
}

/// Gradients of [`irt_loss`] laid out like the model.
#[derive(Clone, Debug)]
pub struct IrtGrads {
    pub backbone: Gradients,
    pub f_head: Gradients,
    pub g_head: Gradients,
    pub mean: Vec<Vec<f64>>,
    pub log_var: Vec<Vec<f64>>,
}

impl IrtGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.backbone.slices();
        out.extend(self.f_head.slices());
        out.extend(self.g_head.slices());
        for (m, lv) in self.mean.iter().zip(&self.log_var) {
            out.push(m);
            out.push(lv);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrtLoss {
    pub total: f64,
    pub score_bce: f64,
    pub pair_bce: f64,
    pub kl: f64,
}

impl IrtModel {
    pub fn new<R: Rng + ?Sized>(
        embedding_dim: usize,
        identity_dim: usize,
        hidden: &[usize],
        model_ids: &[String],
        init_log_var: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("backbone needs at least one hidden layer"));
        }
        let layers: Vec<(usize, Activation)> =
            hidden.iter().map(|&h| (h, Activation::Relu)).collect();
        let backbone = DenseNet::new(embedding_dim + identity_dim, &layers, rng)?;
        let width = *hidden.last().unwrap();
        let f_head = DenseNet::new(width, &[(1, Activation::Identity)], rng)?;
        let g_head = DenseNet::new(width, &[(1, Activation::Identity)], rng)?;
        let identities = model_ids
            .iter()
            .map(|id| IdentityVector {
                model_id: id.clone(),
                mean: (0..identity_dim)
                    .map(|_| 0.01 * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                    .collect(),
                log_var: vec![init_log_var; identity_dim],
            })
            .collect();
        Ok(IrtModel {
            embedding_dim,
            backbone,
            f_head,
            g_head,
            identities,
        })
    }

    pub fn identity_dim(&self) -> usize {
        self.backbone.input_dim() - self.embedding_dim
    }

    pub fn identity_index(&self, model_id: &str) -> Option<usize> {
        self.identities.iter().position(|i| i.model_id == model_id)
    }

    pub fn identity(&self, model_id: &str) -> Option<&IdentityVector> {
        self.identities.iter().find(|i| i.model_id == model_id)
    }

    fn rows(&self, embeddings: ArrayView2<f64>, identity: &[f64]) -> Result<Array2<f64>> {
        check_dim("prompt embedding", self.embedding_dim, embeddings.ncols())?;
        check_dim("identity", self.identity_dim(), identity.len())?;
        let n = embeddings.nrows();
        let mut x = Array2::zeros((n, self.embedding_dim + identity.len()));
        x.slice_mut(s![.., ..self.embedding_dim])
            .assign(&embeddings);
        for mut row in x.rows_mut() {
            for (j, &v) in identity.iter().enumerate() {
                row[self.embedding_dim + j] = v;
            }
        }
        Ok(x)
    }

    /// Score-head logits of one identity on every row of `embeddings`.
    pub fn score_logits(&self, embeddings: ArrayView2<f64>, identity: &[f64]) -> Result<Vec<f64>> {
        let x = self.rows(embeddings, identity)?;
        let h = self.backbone.predict_batch(x.view())?;
        Ok(self.f_head.predict_batch(h.view())?.column(0).to_vec())
    }

    /// Pairwise-head strengths of one identity on every row of `embeddings`.
    pub fn pair_strengths(
        &self,
        embeddings: ArrayView2<f64>,
        identity: &[f64],
    ) -> Result<Vec<f64>> {
        let x = self.rows(embeddings, identity)?;
        let h = self.backbone.predict_batch(x.view())?;
        Ok(self.g_head.predict_batch(h.view())?.column(0).to_vec())
    }

    /// Score logit of a single prompt; `sigmoid` of it is the predicted success probability.
    pub fn predict_score(&self, embedding: &[f64], identity: &[f64]) -> Result<f64> {
        if !embedding.iter().chain(identity).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("score input"));
        }
        let e = ArrayView2::from_shape((1, embedding.len()), embedding)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.score_logits(e, identity)?[0])
    }

    /// Probability that `a` beats `b` on one prompt.
    pub fn predict_pair(&self, embedding: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
        let e = ArrayView2::from_shape((1, embedding.len()), embedding)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let ga = self.pair_strengths(e, a)?[0];
        let gb = self.pair_strengths(e, b)?[0];
        Ok(pair_prob(ga - gb))
    }

    /// Number of standard-normal draws [`irt_loss_with_noise`] consumes.
    pub fn noise_len(&self, n_scores: usize, n_pairs: usize) -> usize {
        (n_scores + 2 * n_pairs) * self.identity_dim()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.backbone.params_mut();
        out.extend(self.f_head.params_mut());
        out.extend(self.g_head.params_mut());
        for id in &mut self.identities {
            out.push(&mut id.mean);
            out.push(&mut id.log_var);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        let nets = [&self.backbone, &self.f_head, &self.g_head];
        nets.iter()
            .all(|n| n.params().iter().all(|p| p.iter().all(|v| v.is_finite())))
            && self
                .identities
                .iter()
                .all(|i| i.mean.iter().chain(&i.log_var).all(|v| v.is_finite()))
    }

    pub fn to_checkpoint(&self, calibration: Option<CalibrationParams>) -> IrtCheckpoint {
        IrtCheckpoint {
            schema_version: SCHEMA_VERSION,
            embedding_dim: self.embedding_dim,
            identity_dim: self.identity_dim(),
            nets: IrtNets {
                backbone: self.backbone.to_record(),
                f_head: self.f_head.to_record(),
                g_head: self.g_head.to_record(),
            },
            identities: self.identities.clone(),
            calibration,
        }
    }

    pub fn from_checkpoint(ck: &IrtCheckpoint) -> Result<Self> {
        if ck.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint schema {}",
                ck.schema_version
            )));
        }
        let model = IrtModel {
            embedding_dim: ck.embedding_dim,
            backbone: DenseNet::from_record(&ck.nets.backbone)?,
            f_head: DenseNet::from_record(&ck.nets.f_head)?,
            g_head: DenseNet::from_record(&ck.nets.g_head)?,
            identities: ck.identities.clone(),
        };
        check_dim(
            "checkpoint identity dim",
            ck.identity_dim,
            model.identity_dim(),
        )?;
        check_dim(
            "score head input",
            model.backbone.output_dim(),
            model.f_head.input_dim(),
        )?;
        check_dim(
            "pair head input",
            model.backbone.output_dim(),
            model.g_head.input_dim(),
        )?;
        for i in &model.identities {
            check_dim("identity mean", ck.identity_dim, i.mean.len())?;
            check_dim("identity log_var", ck.identity_dim, i.log_var.len())?;
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrtNets {
    pub backbone: NetRecord,
    pub f_head: NetRecord,
    pub g_head: NetRecord,
}

/// On-disk form of a trained item-response model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrtCheckpoint {
    pub schema_version: u32,
    pub embedding_dim: usize,
    pub identity_dim: usize,
    pub nets: IrtNets,
    pub identities: Vec<IdentityVector>,
    #[serde(default)]
    pub calibration: Option<CalibrationParams>,
}

impl IrtCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

/// Stacks prompt embeddings into a `n × d_e` matrix.
pub fn embedding_matrix(dataset: &Dataset) -> Array2<f64> {
    let d = dataset.embedding_dim();
    let mut m = Array2::zeros((dataset.prompts.len(), d));
    for (i, p) in dataset.prompts.iter().enumerate() {
        for (j, &v) in p.embedding.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// Translates a dataset's scores and comparisons into index form against `model`.
pub fn dataset_items(
    model: &IrtModel,
    dataset: &Dataset,
) -> Result<(Vec<ScoreItem>, Vec<PairItem>)> {
    let pi = dataset.prompt_index();
    let ident: HashMap<&str, usize> = model
        .identities
        .iter()
        .enumerate()
        .map(|(i, id)| (id.model_id.as_str(), i))
        .collect();
    let lookup = |map: &HashMap<&str, usize>, key: &str, what: &str| -> Result<usize> {
        map.get(key)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown {what} {key}")))
    };
    let scores = dataset
        .scores
        .iter()
        .map(|s| {
            Ok(ScoreItem {
                prompt: lookup(&pi, &s.prompt_id, "prompt")?,
                model: lookup(&ident, &s.model_id, "model")?,
                y: s.binary_score as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = dataset
        .pairwise
        .iter()
        .map(|c| {
            Ok(PairItem {
                prompt: lookup(&pi, &c.prompt_id, "prompt")?,
                a: lookup(&ident, &c.model_a, "model")?,
                b: lookup(&ident, &c.model_b, "model")?,
                z: c.winner as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scores, pairs))
}

/// Loss and gradients with one fresh reparameterization draw per datum.
pub fn irt_loss<R: Rng + ?Sized>(
    model: &IrtModel,
    embeddings: ArrayView2<f64>,
    scores: &[ScoreItem],
    pairs: &[PairItem],
    kl_weight: f64,
    rng: &mut R,
) -> Result<(IrtLoss, IrtGrads)> {
    let noise: Vec<f64> = (0..model.noise_len(scores.len(), pairs.len()))
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    irt_loss_with_noise(model, embeddings, scores, pairs, kl_weight, &noise)
}

/// `mean BCE(scores) + mean BCE(pairs) + kl_weight * mean KL` over the models
/// appearing in the batch, with identity samples `mean + exp(log_var/2) * noise`.
///
/// `noise` holds one identity-sized draw per score row, then two (a, b) per pair.
pub fn irt_loss_with_noise(
    model: &IrtModel,
    embeddings: ArrayView2<f64>,
    scores: &[ScoreItem],
    pairs: &[PairItem],
    kl_weight: f64,
    noise: &[f64],
) -> Result<(IrtLoss, IrtGrads)> {
    if scores.is_empty() && pairs.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let de = model.embedding_dim;
    let d = model.identity_dim();
    check_dim("prompt embedding", de, embeddings.ncols())?;
    check_dim(
        "reparameterization noise",
        model.noise_len(scores.len(), pairs.len()),
        noise.len(),
    )?;
    let n_ids = model.identities.len();
    let ns = scores.len();
    let rows: Vec<(usize, usize)> = scores
        .iter()
        .map(|s| (s.prompt, s.model))
        .chain(
            pairs
                .iter()
                .flat_map(|p| [(p.prompt, p.a), (p.prompt, p.b)]),
        )
        .collect();
    for &(p, k) in &rows {
        if p >= embeddings.nrows() || k >= n_ids {
            return Err(Error::invalid(format!(
                "batch item ({p}, {k}) out of range"
            )));
        }
    }

    let mut x = Array2::zeros((rows.len(), de + d));
    for (r, &(p, k)) in rows.iter().enumerate() {
        let id = &model.identities[k];
        let eps = &noise[r * d..(r + 1) * d];
        let mut row = x.row_mut(r);
        row.slice_mut(s![..de]).assign(&embeddings.row(p));
        for j in 0..d {
            row[de + j] = id.mean[j] + (0.5 * id.log_var[j]).exp() * eps[j];
        }
    }
    let (h, bb_cache) = model.backbone.forward_batch(x.view())?;
    let width = h.ncols();
    let mut grad_h = Array2::zeros((rows.len(), width));

    let mut score_bce = 0.0;
    let mut f_grads = Gradients::zeros_like(&model.f_head);
    if ns > 0 {
        let (fo, fc) = model.f_head.forward_batch(h.slice(s![..ns, ..]))?;
        let mut gout = Array2::zeros((ns, 1));
        for (i, s) in scores.iter().enumerate() {
            let p = sigmoid(fo[[i, 0]]);
            score_bce += bce(s.y, p);
            gout[[i, 0]] = bce_logit_grad(s.y, p) / ns as f64;
        }
        score_bce /= ns as f64;
        let (g, gh) = model.f_head.backward_batch(&fc, gout.view())?;
        f_grads = g;
        grad_h.slice_mut(s![..ns, ..]).assign(&gh);
    }

    let mut pair_bce = 0.0;
    let mut g_grads = Gradients::zeros_like(&model.g_head);
    if !pairs.is_empty() {
        let np = pairs.len();
        let (go, gc) = model.g_head.forward_batch(h.slice(s![ns.., ..]))?;
        let mut gout = Array2::zeros((2 * np, 1));
        for (j, c) in pairs.iter().enumerate() {
            let p = pair_prob(go[[2 * j, 0]] - go[[2 * j + 1, 0]]);
            pair_bce += bce(c.z, p);
            let dd = bce_logit_grad(c.z, p) / np as f64;
            gout[[2 * j, 0]] = dd;
            gout[[2 * j + 1, 0]] = -dd;
        }
        pair_bce /= np as f64;
        let (g, gh) = model.g_head.backward_batch(&gc, gout.view())?;
        g_grads = g;
        grad_h.slice_mut(s![ns.., ..]).assign(&gh);
    }

    let (bb_grads, gx) = model.backbone.backward_batch(&bb_cache, grad_h.view())?;
    let mut g_mean = vec![vec![0.0; d]; n_ids];
    let mut g_lv = vec![vec![0.0; d]; n_ids];
    for (r, &(_, k)) in rows.iter().enumerate() {
        let id = &model.identities[k];
        let eps = &noise[r * d..(r + 1) * d];
        for j in 0..d {
            let gi = gx[[r, de + j]];
            g_mean[k][j] += gi;
            g_lv[k][j] += gi * eps[j] * 0.5 * (0.5 * id.log_var[j]).exp();
        }
    }

    let present: BTreeSet<usize> = rows.iter().map(|&(_, k)| k).collect();
    let w = kl_weight / present.len() as f64;
    let mut kl = 0.0;
    for &k in &present {
        let id = &model.identities[k];
        kl += id.kl();
        for j in 0..d {
            g_mean[k][j] += w * id.mean[j];
            g_lv[k][j] += w * 0.5 * (id.log_var[j].exp() - 1.0);
        }
    }
    kl /= present.len() as f64;

    let total = score_bce + pair_bce + kl_weight * kl;
    if !total.is_finite() {
        return Err(Error::Divergence(format!("irt loss is {total}")));
    }
    Ok((
        IrtLoss {
            total,
            score_bce,
            pair_bce,
            kl,
        },
        IrtGrads {
            backbone: bb_grads,
            f_head: f_grads,
            g_head: g_grads,
            mean: g_mean,
            log_var: g_lv,
        },
    ))
}

/// Applies one optimizer step of `grads` to `model`.
pub(crate) fn apply_grads(
    model: &mut IrtModel,
    grads: &IrtGrads,
    adam: &mut crate::nnkernel::Adam,
) -> Result<()> {
    let g = grads.slices();
    let mut p = model.params_mut();
    adam.step(&mut p, &g)
}

/// Per-prompt discrimination: the mean cross-entropy between observed binary
/// scores and predictions at posterior-mean identities.
#[derive(Clone, Debug, PartialEq)]
pub struct Discrimination {
    pub prompt_ids: Vec<String>,
    pub psi: Vec<f64>,
    /// Prompts without any score from a known model.
    pub excluded: Vec<String>,
}

pub fn discrimination_scores(model: &IrtModel, dataset: &Dataset) -> Result<Discrimination> {
    let emb = embedding_matrix(dataset);
    let table = dataset.score_table();
    let mut sums = vec![0.0; dataset.prompts.len()];
    let mut counts = vec![0usize; dataset.prompts.len()];
    for (m, rec) in dataset.models.iter().enumerate() {
        let Some(id) = model.identity(&rec.model_id) else {
            return Err(Error::invalid(format!(
                "no identity for model {}",
                rec.model_id
            )));
        };
        let logits = model.score_logits(emb.view(), &id.mean)?;
        for (n, z) in logits.iter().enumerate() {
            if let Some(y) = table.binary(m, n) {
                sums[n] += bce(y as f64, sigmoid(*z));
                counts[n] += 1;
            }
        }
    }
    let mut out = Discrimination {
        prompt_ids: Vec::new(),
        psi: Vec::new(),
        excluded: Vec::new(),
    };
    for (n, p) in dataset.prompts.iter().enumerate() {
        if counts[n] == 0 {
            out.excluded.push(p.prompt_id.clone());
        } else {
            out.prompt_ids.push(p.prompt_id.clone());
            out.psi.push(sums[n] / counts[n] as f64);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> IrtModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..3).map(|i| format!("m{i}")).collect();
        IrtModel::new(4, 3, &[8, 8], &ids, -1.0, &mut rng).unwrap()
    }

    fn zero_heads(m: &mut IrtModel) {
        for p in m
            .f_head
            .params_mut()
            .into_iter()
            .chain(m.g_head.params_mut())
        {
            p.fill(0.0);
        }
    }

    #[test]
    fn zero_heads_give_even_odds() {
        let mut m = tiny(1);
        zero_heads(&mut m);
        let z = m
            .predict_score(&[0.3, -1.0, 2.0, 0.1], &[1.0, 2.0, 3.0])
            .unwrap();
        assert_eq!(z, 0.0);
        assert_eq!(sigmoid(z), 0.5);
    }

    #[test]
    fn prediction_is_pure_and_checks_dims() {
        let m = tiny(2);
        let e = [0.3, -1.0, 2.0, 0.1];
        let a = m.predict_score(&e, &m.identities[0].mean).unwrap();
        let b = m.predict_score(&e, &m.identities[0].mean).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(matches!(
            m.predict_score(&e[..3], &m.identities[0].mean),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(m.predict_score(&e, &[0.0; 2]).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_diag(&[0.0; 5], &[0.0; 5]), 0.0);
        assert_eq!(kl_diag(&[2.0], &[0.0]), 2.0);
        assert_eq!(kl_diag(&[2.0, 2.0], &[0.0, 0.0]), 4.0);
        assert!(kl_diag(&[0.0], &[0.5]) > 0.0);
    }

    #[test]
    fn pair_probabilities_sum_to_one() {
        for d in [-40.0, -3.3, -1e-9, 0.0, 1e-12, 0.7, 25.0] {
            assert_eq!(pair_prob(d) + pair_prob(-d), 1.0);
        }
    }

    #[test]
    fn swapping_a_comparison_leaves_pair_loss_unchanged() {
        let m = tiny(3);
        let emb = Array2::from_shape_fn((2, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let ab = [PairItem {
            prompt: 1,
            a: 0,
            b: 2,
            z: 1.0,
        }];
        let ba = [PairItem {
            prompt: 1,
            a: 2,
            b: 0,
            z: 0.0,
        }];
        let noise = vec![0.0; m.noise_len(0, 1)];
        let (l1, _) = irt_loss_with_noise(&m, emb.view(), &[], &ab, 1.0, &noise).unwrap();
        let (l2, _) = irt_loss_with_noise(&m, emb.view(), &[], &ba, 1.0, &noise).unwrap();
        assert_eq!(l1.pair_bce, l2.pair_bce);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = tiny(4);
        let emb = Array2::zeros((1, 4));
        assert!(irt_loss_with_noise(&m, emb.view(), &[], &[], 1.0, &[]).is_err());
    }

    #[test]
    fn bce_is_clamped() {
        assert!(bce(1.0, 0.0).is_finite());
        assert!((bce(1.0, 0.0) - (-(PROB_CLAMP).ln())).abs() < 1e-12);
        assert!((bce(0.3, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn discrimination_at_even_odds_is_ln2() {
        let mut m = tiny(5);
        zero_heads(&mut m);
        let ds = crate::data::gen_synthetic(&crate::data::SyntheticSpec {
            n_models: 3,
            n_prompts: 6,
            embedding_dim: 4,
            latent_rank: 2,
            n_pairwise: 0,
            ..Default::default()
        })
        .unwrap()
        .dataset;
        let mut m2 = m.clone();
        for (id, rec) in m2.identities.iter_mut().zip(&ds.models) {
            id.model_id = rec.model_id.clone();
        }
        let d = discrimination_scores(&m2, &ds).unwrap();
        assert_eq!(d.psi.len(), 6);
        for v in d.psi {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(6);
        let ck = m.to_checkpoint(Some(CalibrationParams {
            alpha: 1.5,
            beta: -0.1,
        }));
        let text = ck.to_json().unwrap();
        let back: IrtCheckpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(IrtModel::from_checkpoint(&back).unwrap(), m);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
