//! Preference-conditioned routing policy.
//!
//! Each candidate `(identity, normalized cost, predicted score)` passes
//! through a shared encoder and the encodings are mean-pooled, so the set
//! summary does not depend on candidate order. The trunk combines the summary
//! with projections of the prompt and of the preference `[1, ω_cost]` into a
//! query `h`; candidate `k` gets logit `I_k · h`.

mod ppo;
mod pretrain;
mod table;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::normalize_max;
use crate::error::{check_dim, Error, Result};
use crate::nnkernel::{
    hsplit, hstack, Activation, BatchCache, DenseNet, Gradients, NetRecord, SCHEMA_VERSION,
};
use crate::real17;

pub use ppo::{
    collect_transitions, compute_advantages, gae, mixup_batch, mixup_pair, ppo_loss_and_grads,
    ppo_update, train_policy, PolicyTrainLog, PpoConfig, PpoLosses, PpoOptimizers, PpoStats,
    ReplayBuffer, TrainItem, Transition,
};
pub use pretrain::{
    pretrain_policy, pretrain_step, pretrain_target, PretrainConfig, PretrainReport,
};
pub use table::{preferred_action, PoolModel, RoutingTable};

/// Trade-off weights `[1, ω_cost]` between normalized score and normalized cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    #[serde(with = "real17::scalar")]
    pub omega_cost: f64,
}

impl Preference {
    pub fn new(omega_cost: f64) -> Result<Self> {
        if !omega_cost.is_finite() || omega_cost < 0.0 {
            return Err(Error::invalid(format!(
                "preference weight {omega_cost} must be a non-negative real"
            )));
        }
        Ok(Preference { omega_cost })
    }

    pub fn weights(&self) -> [f64; 2] {
        [1.0, self.omega_cost]
    }

    /// `ω · v` for a reward-like vector `[score, -cost]`.
    pub fn scalarize(&self, v: [f64; 2]) -> f64 {
        v[0] + self.omega_cost * v[1]
    }
}

/// Candidate models for one routing decision, with costs normalized by the
/// set maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateContext {
    pub identities: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub p_hat: Vec<f64>,
}

impl CandidateContext {
    /// Builds a context from raw costs, dividing them by their maximum.
    pub fn new(identities: Vec<Vec<f64>>, raw_costs: &[f64], p_hat: Vec<f64>) -> Result<Self> {
        let k = identities.len();
        if k < 2 {
            return Err(Error::invalid(
                "a routing decision needs at least two candidates",
            ));
        }
        check_dim("candidate costs", k, raw_costs.len())?;
        check_dim("candidate predictions", k, p_hat.len())?;
        let d = identities[0].len();
        for id in &identities {
            check_dim("candidate identity", d, id.len())?;
            if !id.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("candidate identity"));
            }
        }
        if !raw_costs.iter().all(|&c| c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("candidate costs must be positive"));
        }
        if !p_hat.iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::invalid("predicted scores must lie in [0, 1]"));
        }
        Ok(CandidateContext {
            identities,
            costs: normalize_max(raw_costs),
            p_hat,
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn identity_dim(&self) -> usize {
        self.identities[0].len()
    }

    /// The same candidates reordered so that position `i` holds old position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        CandidateContext {
            identities: perm.iter().map(|&i| self.identities[i].clone()).collect(),
            costs: perm.iter().map(|&i| self.costs[i]).collect(),
            p_hat: perm.iter().map(|&i| self.p_hat[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoutingPolicy {
    pub embedding_dim: usize,
    pub identity_dim: usize,
    pub cand_enc: DenseNet,
    pub prompt_proj: DenseNet,
    pub pref_proj: DenseNet,
    pub trunk: DenseNet,
}

/// Predicts the expected reward vector `[score, -cost]` from the prompt and
/// the candidate-set summary; it never sees the preference.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    pub net: DenseNet,
}

#[derive(Clone, Debug)]
pub struct PolicyGrads {
    pub cand_enc: Gradients,
    pub prompt_proj: Gradients,
    pub pref_proj: Gradients,
    pub trunk: Gradients,
}

impl PolicyGrads {
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.cand_enc.slices_mut();
        out.extend(self.prompt_proj.slices_mut());
        out.extend(self.pref_proj.slices_mut());
        out.extend(self.trunk.slices_mut());
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.cand_enc.slices();
        out.extend(self.prompt_proj.slices());
        out.extend(self.pref_proj.slices());
        out.extend(self.trunk.slices());
        out
    }
}

/// Batched policy output; row `i` of every field belongs to decision `i`.
#[derive(Clone, Debug)]
pub struct PolicyOutput {
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// Mean-pooled candidate encodings, `batch × hidden`.
    pub summary: Array2<f64>,
}

pub struct PolicyCache {
    offsets: Vec<usize>,
    identities: Array2<f64>,
    query: Array2<f64>,
    cand: BatchCache,
    prompt: BatchCache,
    pref: BatchCache,
    trunk: BatchCache,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn checked_view<'a>(x: &'a [f64], what: &'static str) -> Result<ArrayView2<'a, f64>> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::invalid(e.to_string()))
}

impl RoutingPolicy {
    pub fn new<R: Rng + ?Sized>(
        embedding_dim: usize,
        identity_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        use Activation::*;
        Ok(RoutingPolicy {
            embedding_dim,
            identity_dim,
            cand_enc: DenseNet::new(identity_dim + 2, &[(hidden, Relu), (hidden, Relu)], rng)?,
            prompt_proj: DenseNet::new(embedding_dim, &[(hidden, Relu)], rng)?,
            pref_proj: DenseNet::new(2, &[(hidden, Identity)], rng)?,
            trunk: DenseNet::new(3 * hidden, &[(hidden, Relu), (identity_dim, Identity)], rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.cand_enc.output_dim()
    }

    fn candidate_rows(
        &self,
        contexts: &[&CandidateContext],
    ) -> Result<(Array2<f64>, Array2<f64>, Vec<usize>)> {
        let d = self.identity_dim;
        let total: usize = contexts.iter().map(|c| c.len()).sum();
        let mut rows = Array2::zeros((total, d + 2));
        let mut ids = Array2::zeros((total, d));
        let mut offsets = Vec::with_capacity(contexts.len() + 1);
        offsets.push(0);
        let mut r = 0;
        for ctx in contexts {
            if ctx.len() < 2 {
                return Err(Error::invalid(
                    "a routing decision needs at least two candidates",
                ));
            }
            check_dim("candidate identity", d, ctx.identity_dim())?;
            for k in 0..ctx.len() {
                for j in 0..d {
                    rows[[r, j]] = ctx.identities[k][j];
                    ids[[r, j]] = ctx.identities[k][j];
                }
                rows[[r, d]] = ctx.costs[k];
                rows[[r, d + 1]] = ctx.p_hat[k];
                r += 1;
            }
            offsets.push(r);
        }
        Ok((rows, ids, offsets))
    }

    fn pool(encoded: &Array2<f64>, offsets: &[usize]) -> Array2<f64> {
        let b = offsets.len() - 1;
        let mut out = Array2::zeros((b, encoded.ncols()));
        for i in 0..b {
            let seg = encoded.slice(s![offsets[i]..offsets[i + 1], ..]);
            let k = (offsets[i + 1] - offsets[i]) as f64;
            out.row_mut(i).assign(&(seg.sum_axis(Axis(0)) / k));
        }
        out
    }

    /// Mean-pooled candidate encoding of one context.
    pub fn encode_context(&self, context: &CandidateContext) -> Result<Vec<f64>> {
        let (rows, _, offsets) = self.candidate_rows(&[context])?;
        let enc = self.cand_enc.predict_batch(rows.view())?;
        Ok(Self::pool(&enc, &offsets).row(0).to_vec())
    }

    pub fn forward(
        &self,
        embeddings: ArrayView2<f64>,
        contexts: &[&CandidateContext],
        omegas: &[f64],
    ) -> Result<(PolicyOutput, PolicyCache)> {
        let b = contexts.len();
        check_dim("policy batch embeddings", b, embeddings.nrows())?;
        check_dim("policy batch preferences", b, omegas.len())?;
        let (rows, identities, offsets) = self.candidate_rows(contexts)?;
        let (enc, cand) = self.cand_enc.forward_batch(rows.view())?;
        let summary = Self::pool(&enc, &offsets);
        let (pe, prompt) = self.prompt_proj.forward_batch(embeddings)?;
        let mut pref_in = Array2::ones((b, 2));
        for (i, &w) in omegas.iter().enumerate() {
            pref_in[[i, 1]] = w;
        }
        let (pw, pref) = self.pref_proj.forward_batch(pref_in.view())?;
        let trunk_in = hstack(&[summary.view(), pe.view(), pw.view()]);
        let (query, trunk) = self.trunk.forward_batch(trunk_in.view())?;

        let mut logits = Vec::with_capacity(b);
        let mut probs = Vec::with_capacity(b);
        for i in 0..b {
            let q = query.row(i);
            let z: Vec<f64> = (offsets[i]..offsets[i + 1])
                .map(|r| identities.row(r).dot(&q))
                .collect();
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("routing logits"));
            }
            probs.push(softmax(&z));
            logits.push(z);
        }
        Ok((
            PolicyOutput {
                logits,
                probs,
                summary,
            },
            PolicyCache {
                offsets,
                identities,
                query,
                cand,
                prompt,
                pref,
                trunk,
            },
        ))
    }

    /// Parameter gradients given `d loss / d logit` for every candidate.
    pub fn backward(&self, cache: &PolicyCache, grad_logits: &[Vec<f64>]) -> Result<PolicyGrads> {
        let b = cache.offsets.len() - 1;
        check_dim("logit gradient batch", b, grad_logits.len())?;
        let mut d_query = Array2::zeros(cache.query.raw_dim());
        let mut d_cand_ids = 0usize;
        for (i, grad) in grad_logits.iter().enumerate() {
            let (lo, hi) = (cache.offsets[i], cache.offsets[i + 1]);
            check_dim("logit gradient width", hi - lo, grad.len())?;
            let mut row = d_query.row_mut(i);
            for (r, &g) in (lo..hi).zip(grad) {
                row.scaled_add(g, &cache.identities.row(r));
            }
            d_cand_ids += hi - lo;
        }
        let (trunk, d_in) = self.trunk.backward_batch(&cache.trunk, d_query.view())?;
        let h = self.hidden();
        let parts = hsplit(&d_in, &[h, h, h]);
        let (prompt_proj, _) = self
            .prompt_proj
            .backward_batch(&cache.prompt, parts[1].view())?;
        let (pref_proj, _) = self
            .pref_proj
            .backward_batch(&cache.pref, parts[2].view())?;
        let mut d_enc = Array2::zeros((d_cand_ids, h));
        for i in 0..b {
            let (lo, hi) = (cache.offsets[i], cache.offsets[i + 1]);
            let g = &parts[0].row(i) / (hi - lo) as f64;
            for r in lo..hi {
                d_enc.row_mut(r).assign(&g);
            }
        }
        let (cand_enc, _) = self.cand_enc.backward_batch(&cache.cand, d_enc.view())?;
        Ok(PolicyGrads {
            cand_enc,
            prompt_proj,
            pref_proj,
            trunk,
        })
    }

    /// Routing distribution and logits for a single prompt.
    pub fn route(
        &self,
        embedding: &[f64],
        context: &CandidateContext,
        pref: Preference,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = checked_view(embedding, "prompt embedding")?;
        let (out, _) = self.forward(e, &[context], &[pref.omega_cost])?;
        let PolicyOutput {
            mut logits,
            mut probs,
            ..
        } = out;
        Ok((probs.pop().unwrap(), logits.pop().unwrap()))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.cand_enc.params_mut();
        out.extend(self.prompt_proj.params_mut());
        out.extend(self.pref_proj.params_mut());
        out.extend(self.trunk.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = self.cand_enc.params();
        out.extend(self.prompt_proj.params());
        out.extend(self.pref_proj.params());
        out.extend(self.trunk.params());
        out
    }

    pub fn zero_grads(&self) -> PolicyGrads {
        PolicyGrads {
            cand_enc: Gradients::zeros_like(&self.cand_enc),
            prompt_proj: Gradients::zeros_like(&self.prompt_proj),
            pref_proj: Gradients::zeros_like(&self.pref_proj),
            trunk: Gradients::zeros_like(&self.trunk),
        }
    }
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(
        embedding_dim: usize,
        summary_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        use Activation::*;
        Ok(ValueNet {
            net: DenseNet::new(
                embedding_dim + summary_dim,
                &[(hidden, Relu), (hidden, Relu), (2, Identity)],
                rng,
            )?,
        })
    }

    /// Value estimates, `batch × 2`. The summary enters as a constant.
    pub fn forward(
        &self,
        embeddings: ArrayView2<f64>,
        summary: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, BatchCache)> {
        let x = hstack(&[embeddings, summary]);
        self.net.forward_batch(x.view())
    }

    pub fn predict(
        &self,
        embeddings: ArrayView2<f64>,
        summary: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        Ok(self.forward(embeddings, summary)?.0)
    }

    pub fn backward(&self, cache: &BatchCache, grad_values: ArrayView2<f64>) -> Result<Gradients> {
        Ok(self.net.backward_batch(cache, grad_values)?.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNets {
    pub candidate_encoder: NetRecord,
    pub prompt_proj: NetRecord,
    pub pref_proj: NetRecord,
    pub trunk: NetRecord,
    pub value: NetRecord,
}

/// On-disk form of a routing policy together with its value network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub schema_version: u32,
    pub embedding_dim: usize,
    pub identity_dim: usize,
    pub config: PolicyConfig,
    pub nets: PolicyNets,
}

impl PolicyCheckpoint {
    pub fn new(policy: &RoutingPolicy, value: &ValueNet, config: &PolicyConfig) -> Self {
        PolicyCheckpoint {
            schema_version: SCHEMA_VERSION,
            embedding_dim: policy.embedding_dim,
            identity_dim: policy.identity_dim,
            config: config.clone(),
            nets: PolicyNets {
                candidate_encoder: policy.cand_enc.to_record(),
                prompt_proj: policy.prompt_proj.to_record(),
                pref_proj: policy.pref_proj.to_record(),
                trunk: policy.trunk.to_record(),
                value: value.net.to_record(),
            },
        }
    }

    pub fn restore(&self) -> Result<(RoutingPolicy, ValueNet)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint schema {}",
                self.schema_version
            )));
        }
        let policy = RoutingPolicy {
            embedding_dim: self.embedding_dim,
            identity_dim: self.identity_dim,
            cand_enc: DenseNet::from_record(&self.nets.candidate_encoder)?,
            prompt_proj: DenseNet::from_record(&self.nets.prompt_proj)?,
            pref_proj: DenseNet::from_record(&self.nets.pref_proj)?,
            trunk: DenseNet::from_record(&self.nets.trunk)?,
        };
        let h = policy.hidden();
        check_dim(
            "candidate encoder input",
            self.identity_dim + 2,
            policy.cand_enc.input_dim(),
        )?;
        check_dim(
            "prompt projection input",
            self.embedding_dim,
            policy.prompt_proj.input_dim(),
        )?;
        check_dim(
            "prompt projection width",
            h,
            policy.prompt_proj.output_dim(),
        )?;
        check_dim(
            "preference projection input",
            2,
            policy.pref_proj.input_dim(),
        )?;
        check_dim(
            "preference projection width",
            h,
            policy.pref_proj.output_dim(),
        )?;
        check_dim("trunk input", 3 * h, policy.trunk.input_dim())?;
        check_dim("trunk output", self.identity_dim, policy.trunk.output_dim())?;
        let value = ValueNet {
            net: DenseNet::from_record(&self.nets.value)?,
        };
        check_dim("value input", self.embedding_dim + h, value.net.input_dim())?;
        check_dim("value output", 2, value.net.output_dim())?;
        Ok((policy, value))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (RoutingPolicy, CandidateContext) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = RoutingPolicy::new(4, 3, 8, &mut rng).unwrap();
        let ctx = CandidateContext::new(
            vec![
                vec![0.5, -1.0, 0.2],
                vec![1.0, 0.3, -0.4],
                vec![-0.7, 0.1, 0.9],
            ],
            &[90.0, 1.08, 10.0],
            vec![0.8, 0.3, 0.6],
        )
        .unwrap();
        (p, ctx)
    }

    const E: [f64; 4] = [0.2, -0.5, 1.0, 0.0];

    #[test]
    fn distribution_is_normalized() {
        let (p, ctx) = setup();
        let (probs, _) = p.route(&E, &ctx, Preference::new(0.7).unwrap()).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn shared_identity_gives_uniform_distribution() {
        let (p, _) = setup();
        let id = vec![0.3, 0.1, -0.2];
        let ctx = CandidateContext::new(
            vec![id.clone(), id.clone(), id],
            &[1.0, 2.0, 3.0],
            vec![0.1, 0.5, 0.9],
        )
        .unwrap();
        let (probs, _) = p.route(&E, &ctx, Preference::new(1.0).unwrap()).unwrap();
        assert!(probs.iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn permutations_permute_probabilities() {
        let (p, ctx) = setup();
        let w = Preference::new(0.4).unwrap();
        let base_summary = p.encode_context(&ctx).unwrap();
        let (base, _) = p.route(&E, &ctx, w).unwrap();
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let c = ctx.permuted(&perm);
            let s = p.encode_context(&c).unwrap();
            for (a, b) in s.iter().zip(&base_summary) {
                assert!((a - b).abs() < 1e-9);
            }
            let (probs, _) = p.route(&E, &c, w).unwrap();
            for (i, &j) in perm.iter().enumerate() {
                assert!((probs[i] - base[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn duplicated_candidate_reweights_mean() {
        let (p, ctx) = setup();
        let dup = CandidateContext {
            identities: vec![
                ctx.identities[0].clone(),
                ctx.identities[0].clone(),
                ctx.identities[1].clone(),
            ],
            costs: vec![ctx.costs[0], ctx.costs[0], ctx.costs[1]],
            p_hat: vec![ctx.p_hat[0], ctx.p_hat[0], ctx.p_hat[1]],
        };
        let single = |k: usize| {
            let c = CandidateContext {
                identities: vec![ctx.identities[k].clone(); 2],
                costs: vec![ctx.costs[k]; 2],
                p_hat: vec![ctx.p_hat[k]; 2],
            };
            p.encode_context(&c).unwrap()
        };
        let (a, b) = (single(0), single(1));
        let s = p.encode_context(&dup).unwrap();
        for j in 0..s.len() {
            assert!((s[j] - (2.0 * a[j] + b[j]) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn context_rejects_single_candidate_and_bad_dims() {
        assert!(CandidateContext::new(vec![vec![0.0]], &[1.0], vec![0.5]).is_err());
        assert!(CandidateContext::new(
            vec![vec![0.0], vec![0.0, 1.0]],
            &[1.0, 1.0],
            vec![0.5, 0.5]
        )
        .is_err());
        let (p, _) = setup();
        let ctx = CandidateContext::new(
            vec![vec![0.0; 2], vec![1.0; 2]],
            &[1.0, 2.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(p.route(&E, &ctx, Preference::new(0.0).unwrap()).is_err());
        let ctx = CandidateContext::new(
            vec![vec![0.0; 3], vec![1.0; 3]],
            &[1.0, 2.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(p
            .route(&E[..3], &ctx, Preference::new(0.0).unwrap())
            .is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [0.3, -1.2, 2.5];
        let a = softmax(&z);
        let b = softmax(&z.map(|v| v + 7.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn value_ignores_preference() {
        let (p, ctx) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = ValueNet::new(4, 8, 8, &mut rng).unwrap();
        let e = ArrayView2::from_shape((1, 4), &E).unwrap();
        let (o1, _) = p.forward(e, &[&ctx], &[0.0]).unwrap();
        let (o2, _) = p.forward(e, &[&ctx], &[2.0]).unwrap();
        let v1 = v.predict(e, o1.summary.view()).unwrap();
        let v2 = v.predict(e, o2.summary.view()).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.ncols(), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = ValueNet::new(4, 8, 8, &mut rng).unwrap();
        let ck = PolicyCheckpoint::new(&p, &v, &PolicyConfig { hidden: 8, seed: 1 });
        let text = ck.to_json().unwrap();
        let back: PolicyCheckpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        let (p2, v2) = back.restore().unwrap();
        assert_eq!(p2, p);
        assert_eq!(v2, v);
    }
}
