//! Characterizing a new model from a small evaluation budget: stratified
//! prompt selection by discrimination, then identity inference against a
//! frozen item-response model.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::irt::{bce, bce_logit_grad, embedding_matrix, IdentityVector, IrtModel};
use crate::nnkernel::{sigmoid, Adam, AdamConfig};
use crate::policy::{CandidateContext, PoolModel};

pub const DEFAULT_STRATA: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBudgetPlan {
    pub budget: usize,
    pub n_strata: usize,
    /// Prompts drawn from each stratum, lowest discrimination first.
    pub allocation: Vec<usize>,
    /// Selected prompts in input order.
    pub prompt_ids: Vec<String>,
}

/// Splits prompts into `n_strata` equal-count quantile bins of `psi` and
/// draws `budget` prompts spread over the bins as evenly as their sizes allow.
pub fn stratified_select(
    prompt_ids: &[String],
    psi: &[f64],
    budget: usize,
    n_strata: usize,
    seed: u64,
) -> Result<PromptBudgetPlan> {
    check_dim("discrimination scores", prompt_ids.len(), psi.len())?;
    let n = psi.len();
    if budget > n {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the {n} available prompts"
        )));
    }
    if n_strata == 0 || n_strata > budget {
        return Err(Error::invalid(format!(
            "need 1 <= strata <= budget, got {n_strata} strata for budget {budget}"
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discrimination scores"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| psi[a].total_cmp(&psi[b]).then(a.cmp(&b)));

    // Bin sizes differ by at most one; the first `n % n_strata` bins are larger.
    let sizes: Vec<usize> = (0..n_strata)
        .map(|i| n / n_strata + usize::from(i < n % n_strata))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut allocation = vec![budget / n_strata; n_strata];
    let extra = budget % n_strata;
    let mut larger: Vec<usize> = (0..n_strata).filter(|&i| sizes[i] > n / n_strata).collect();
    let mut smaller: Vec<usize> = (0..n_strata)
        .filter(|&i| sizes[i] == n / n_strata)
        .collect();
    larger.shuffle(&mut rng);
    smaller.shuffle(&mut rng);
    for &i in larger.iter().chain(&smaller).take(extra) {
        allocation[i] += 1;
    }

    let mut chosen = Vec::with_capacity(budget);
    let mut start = 0;
    for (size, &take) in sizes.iter().zip(&allocation) {
        let bin = &order[start..start + size];
        chosen.extend(
            index::sample(&mut rng, *size, take)
                .into_iter()
                .map(|j| bin[j]),
        );
        start += size;
    }
    chosen.sort_unstable();
    Ok(PromptBudgetPlan {
        budget,
        n_strata,
        allocation,
        prompt_ids: chosen.into_iter().map(|i| prompt_ids[i].clone()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub steps: usize,
    pub lr: f64,
    /// Rows per step; `None` uses every observation each step.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            steps: 200,
            lr: 0.01,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferredIdentity {
    pub identity: IdentityVector,
    pub n_observations: usize,
    /// Set when there was nothing to fit and the prior was returned.
    pub from_prior: bool,
    /// Summed cross-entropy at the posterior mean plus KL to the prior.
    pub final_loss: f64,
}

/// Summed binary cross-entropy of the score head over `embeddings` rows,
/// each evaluated at `mean + exp(log_var / 2) * noise_row`, plus
/// `KL(q || N(0, I))`. Returns the objective and its gradients with respect
/// to `mean` and `log_var`. `noise` has one row per embedding row.
pub fn identity_objective(
    irt: &IrtModel,
    embeddings: ArrayView2<f64>,
    labels: &[f64],
    mean: &[f64],
    log_var: &[f64],
    noise: ArrayView2<f64>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = irt.identity_dim();
    let de = irt.embedding_dim;
    check_dim("labels", embeddings.nrows(), labels.len())?;
    check_dim("prompt embedding", de, embeddings.ncols())?;
    check_dim("identity mean", d, mean.len())?;
    check_dim("identity log-variance", d, log_var.len())?;
    check_dim("noise rows", embeddings.nrows(), noise.nrows())?;
    check_dim("noise width", d, noise.ncols())?;
    let sd: Vec<f64> = log_var.iter().map(|v| (0.5 * v).exp()).collect();
    let mut g_mean: Vec<f64> = mean.to_vec();
    let mut g_lv: Vec<f64> = log_var.iter().map(|v| 0.5 * (v.exp() - 1.0)).collect();
    let mut loss = crate::irt::kl_diag(mean, log_var);
    let rows = embeddings.nrows();
    if rows == 0 {
        return Ok((loss, g_mean, g_lv));
    }
    let mut x = Array2::zeros((rows, de + d));
    x.slice_mut(s![.., ..de]).assign(&embeddings);
    for r in 0..rows {
        for j in 0..d {
            x[[r, de + j]] = mean[j] + sd[j] * noise[[r, j]];
        }
    }
    let (h, bb_cache) = irt.backbone.forward_batch(x.view())?;
    let (z, f_cache) = irt.f_head.forward_batch(h.view())?;
    let mut gz = Array2::zeros((rows, 1));
    for (r, &y) in labels.iter().enumerate() {
        let p = sigmoid(z[[r, 0]]);
        loss += bce(y, p);
        gz[[r, 0]] = bce_logit_grad(y, p);
    }
    let gh = irt.f_head.input_grad_batch(&f_cache, gz.view())?;
    let gx = irt.backbone.input_grad_batch(&bb_cache, gh.view())?;
    for r in 0..rows {
        for j in 0..d {
            let gi = gx[[r, de + j]];
            g_mean[j] += gi;
            g_lv[j] += gi * noise[[r, j]] * 0.5 * sd[j];
        }
    }
    Ok((loss, g_mean, g_lv))
}

/// Fits a posterior identity for a new model from binary `labels` on the
/// rows of `embeddings`. Only the identity is optimized; `irt` is untouched.
pub fn infer_identity(
    irt: &IrtModel,
    model_id: &str,
    embeddings: ArrayView2<f64>,
    labels: &[f64],
    config: &InferenceConfig,
) -> Result<InferredIdentity> {
    check_dim("labels", embeddings.nrows(), labels.len())?;
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid("cold-start labels must be binary"));
    }
    let d = irt.identity_dim();
    let mut identity = IdentityVector::prior(model_id, d);
    let n = labels.len();
    if n == 0 {
        return Ok(InferredIdentity {
            identity,
            n_observations: 0,
            from_prior: true,
            final_loss: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let b = config.batch_size.map_or(n, |b| b.clamp(1, n));
    let scale = n as f64 / b as f64;
    let mut emb = Array2::zeros((b, embeddings.ncols()));
    let mut ys = vec![0.0; b];
    for step in 0..config.steps {
        if b == n {
            emb.assign(&embeddings);
            ys.copy_from_slice(labels);
        } else {
            for (r, i) in index::sample(&mut rng, n, b).into_iter().enumerate() {
                emb.row_mut(r).assign(&embeddings.row(i));
                ys[r] = labels[i];
            }
        }
        let noise = Array2::from_shape_fn((b, d), |_| {
            Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let (_, mut gm, mut gl) = identity_objective(
            irt,
            emb.view(),
            &ys,
            &identity.mean,
            &identity.log_var,
            noise.view(),
        )?;
        if b < n {
            // Rescale the data term of the minibatch to the full sum.
            for j in 0..d {
                gm[j] = identity.mean[j] + scale * (gm[j] - identity.mean[j]);
                let kl_lv = 0.5 * (identity.log_var[j].exp() - 1.0);
                gl[j] = kl_lv + scale * (gl[j] - kl_lv);
            }
        }
        if !gm.iter().chain(&gl).all(|v| v.is_finite()) {
            return Err(Error::Divergence(format!("identity inference step {step}")));
        }
        adam.step(
            &mut [&mut identity.mean[..], &mut identity.log_var[..]],
            &[&gm[..], &gl[..]],
        )?;
    }
    let zero = Array2::zeros((n, d));
    let (final_loss, _, _) = identity_objective(
        irt,
        embeddings,
        labels,
        &identity.mean,
        &identity.log_var,
        zero.view(),
    )?;
    Ok(InferredIdentity {
        identity,
        n_observations: n,
        from_prior: false,
        final_loss,
    })
}

/// Embeddings and binary labels of `model_id` in `dataset`, optionally only
/// on the listed prompts. Prompts without a score are skipped.
pub fn observations(
    dataset: &Dataset,
    model_id: &str,
    prompts: Option<&[String]>,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let m = dataset
        .model_index()
        .get(model_id)
        .copied()
        .ok_or_else(|| Error::invalid(format!("unknown model {model_id}")))?;
    let table = dataset.score_table();
    let emb = embedding_matrix(dataset);
    let rows: Vec<usize> = match prompts {
        None => (0..dataset.prompts.len()).collect(),
        Some(ids) => {
            let pi = dataset.prompt_index();
            ids.iter()
                .map(|id| {
                    pi.get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("unknown prompt {id}")))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut keep = Vec::new();
    let mut labels = Vec::new();
    for n in rows {
        if let Some(y) = table.binary(m, n) {
            keep.push(n);
            labels.push(f64::from(y));
        }
    }
    Ok((emb.select(ndarray::Axis(0), &keep), labels))
}

/// The routable models, each with a unique id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Registry {
    models: Vec<PoolModel>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pool(pool: Vec<PoolModel>) -> Result<Self> {
        let mut r = Registry::new();
        for m in pool {
            r.register(m.model_id, m.cost, m.identity)?;
        }
        Ok(r)
    }

    pub fn register(
        &mut self,
        model_id: impl Into<String>,
        cost: f64,
        identity: Vec<f64>,
    ) -> Result<()> {
        let model_id = model_id.into();
        if self.get(&model_id).is_some() {
            return Err(Error::invalid(format!(
                "model {model_id} is already registered"
            )));
        }
        if !(cost.is_finite() && cost > 0.0) {
            return Err(Error::invalid(format!(
                "model {model_id} needs a positive cost"
            )));
        }
        if !identity.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("identity vector"));
        }
        if let Some(first) = self.models.first() {
            check_dim("identity", first.identity.len(), identity.len())?;
        }
        self.models.push(PoolModel {
            model_id,
            identity,
            cost,
        });
        Ok(())
    }

    pub fn deregister(&mut self, model_id: &str) -> Result<PoolModel> {
        let i = self
            .models
            .iter()
            .position(|m| m.model_id == model_id)
            .ok_or_else(|| Error::invalid(format!("model {model_id} is not registered")))?;
        Ok(self.models.remove(i))
    }

    pub fn get(&self, model_id: &str) -> Option<&PoolModel> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn models(&self) -> &[PoolModel] {
        &self.models
    }

    /// Routing context for one prompt over registered models, with
    /// predicted scores from `irt` (or zeros when `use_predicted_scores` is off).
    pub fn context(
        &self,
        irt: &IrtModel,
        embedding: &[f64],
        ids: &[&str],
        use_predicted_scores: bool,
    ) -> Result<CandidateContext> {
        let models: Vec<&PoolModel> = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::invalid(format!("model {id} is not registered")))
            })
            .collect::<Result<_>>()?;
        let p_hat = models
            .iter()
            .map(|m| {
                if use_predicted_scores {
                    Ok(sigmoid(irt.predict_score(embedding, &m.identity)?))
                } else {
                    Ok(0.0)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        CandidateContext::new(
            models.iter().map(|m| m.identity.clone()).collect(),
            &models.iter().map(|m| m.cost).collect::<Vec<_>>(),
            p_hat,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyConfig, Preference, RoutingPolicy};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("q{i}")).collect()
    }

    fn tiny_irt() -> IrtModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        IrtModel::new(4, 3, &[8, 8], &ids(2), -1.0, &mut rng).unwrap()
    }

    #[test]
    fn two_strata_take_one_prompt_each() {
        let plan = stratified_select(&ids(4), &[0.1, 0.2, 0.9, 1.0], 2, 2, 5).unwrap();
        assert_eq!(plan.allocation, vec![1, 1]);
        let low = plan
            .prompt_ids
            .iter()
            .filter(|p| *p == "q0" || *p == "q1")
            .count();
        let high = plan
            .prompt_ids
            .iter()
            .filter(|p| *p == "q2" || *p == "q3")
            .count();
        assert_eq!((low, high), (1, 1));
    }

    #[test]
    fn full_budget_selects_everything() {
        let psi = [0.4, 0.1, 0.3, 0.9, 0.2, 0.5, 0.7];
        let plan = stratified_select(&ids(7), &psi, 7, 3, 0).unwrap();
        assert_eq!(plan.prompt_ids, ids(7));
    }

    #[test]
    fn rejects_bad_budgets() {
        assert!(stratified_select(&ids(3), &[0.1, 0.2, 0.3], 4, 2, 0).is_err());
        assert!(stratified_select(&ids(3), &[0.1, 0.2, 0.3], 2, 3, 0).is_err());
        assert!(stratified_select(&ids(3), &[0.1, 0.2, 0.3], 2, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn plans_are_balanced_and_reproducible(
            psi in prop::collection::vec(0.0f64..3.0, 5..80),
            strata in 1usize..6,
            frac in 0.0f64..1.0,
            seed in 0u64..1000,
        ) {
            let n = psi.len();
            prop_assume!(strata <= n);
            let budget = strata + ((n - strata) as f64 * frac) as usize;
            let a = stratified_select(&ids(n), &psi, budget, strata, seed).unwrap();
            let b = stratified_select(&ids(n), &psi, budget, strata, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.prompt_ids.len(), budget);
            let lo = *a.allocation.iter().min().unwrap();
            let hi = *a.allocation.iter().max().unwrap();
            prop_assert!(hi - lo <= 1);
            prop_assert!(lo >= 1);
            let mut uniq = a.prompt_ids.clone();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), budget);
        }
    }

    #[test]
    fn empty_evaluation_returns_the_prior() {
        let irt = tiny_irt();
        let emb = Array2::zeros((0, 4));
        let r = infer_identity(&irt, "new", emb.view(), &[], &InferenceConfig::default()).unwrap();
        assert!(r.from_prior);
        assert_eq!(r.identity.mean, vec![0.0; 3]);
        assert_eq!(r.identity.log_var, vec![0.0; 3]);
    }

    #[test]
    fn inference_leaves_the_irt_model_alone() {
        let irt = tiny_irt();
        let before = irt.to_checkpoint(None).sha256().unwrap();
        let emb = Array2::from_shape_fn((6, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let r = infer_identity(
            &irt,
            "new",
            emb.view(),
            &labels,
            &InferenceConfig::default(),
        )
        .unwrap();
        assert!(!r.from_prior);
        assert!(r.identity.mean.iter().all(|v| v.is_finite()));
        assert_eq!(irt.to_checkpoint(None).sha256().unwrap(), before);
    }

    #[test]
    fn rejects_non_binary_labels() {
        let irt = tiny_irt();
        let emb = Array2::zeros((1, 4));
        assert!(
            infer_identity(&irt, "new", emb.view(), &[0.5], &InferenceConfig::default()).is_err()
        );
    }

    #[test]
    fn minibatch_inference_runs() {
        let irt = tiny_irt();
        let emb = Array2::from_shape_fn((20, 4), |(i, j)| ((i * 7 + j) % 5) as f64 * 0.2);
        let labels: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let cfg = InferenceConfig {
            batch_size: Some(6),
            ..InferenceConfig::default()
        };
        let r = infer_identity(&irt, "new", emb.view(), &labels, &cfg).unwrap();
        assert_eq!(r.n_observations, 20);
        assert!(r.final_loss.is_finite());
    }

    #[test]
    fn registry_lifecycle() {
        let irt = tiny_irt();
        let mut reg = Registry::new();
        reg.register("old", 2.0, vec![0.1, 0.2, 0.3]).unwrap();
        reg.register("new", 0.5, vec![-0.1, 0.0, 0.4]).unwrap();
        assert!(reg.register("new", 1.0, vec![0.0; 3]).is_err());
        assert!(reg.register("bad", 1.0, vec![0.0; 2]).is_err());

        let e = [0.2, -0.1, 0.3, 0.0];
        let ctx = reg.context(&irt, &e, &["old", "new"], true).unwrap();
        assert_eq!(ctx.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = RoutingPolicy::new(4, 3, PolicyConfig::default().hidden, &mut rng).unwrap();
        let (probs, _) = policy
            .route(&e, &ctx, Preference::new(0.5).unwrap())
            .unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        reg.deregister("new").unwrap();
        assert!(reg.context(&irt, &e, &["old", "new"], true).is_err());
        assert!(reg.deregister("new").is_err());
        assert_eq!(reg.models().len(), 1);
    }
}
