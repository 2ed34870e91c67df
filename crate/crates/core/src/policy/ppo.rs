//! Multi-objective PPO on single-step routing episodes.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{CandidateContext, PolicyGrads, Preference, RoutingPolicy, RoutingTable, ValueNet};
use crate::error::{Error, Result};
use crate::nnkernel::{clip_global_norm, Adam, AdamConfig, Gradients};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub steps: usize,
    /// Transitions collected per step.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Discount and GAE mixing; both are inert for single-step episodes.
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub buffer_capacity: usize,
    /// Update rounds a buffered transition may take part in.
    pub max_reuse: usize,
    pub mixup: bool,
    pub mixup_xi: f64,
    pub k_min: usize,
    /// Largest candidate set; `None` means the whole pool.
    pub k_max: Option<usize>,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Trains for a single preference instead of sampling one per transition.
    pub fixed_omega: Option<f64>,
    pub use_predicted_scores: bool,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            steps: 500,
            batch_size: 256,
            minibatch_size: 256,
            epochs: 4,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            gamma: 1.0,
            gae_lambda: 0.95,
            lr: 1e-3,
            grad_clip: 5.0,
            buffer_capacity: 4096,
            max_reuse: 4,
            mixup: true,
            mixup_xi: 0.2,
            k_min: 2,
            k_max: None,
            omega_min: 0.0,
            omega_max: 2.0,
            fixed_omega: None,
            use_predicted_scores: true,
            seed: 0,
        }
    }
}

impl PpoConfig {
    fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::invalid("clip epsilon must lie in (0, 1)"));
        }
        if self.mixup_xi.is_nan() || self.mixup_xi <= 0.0 {
            return Err(Error::invalid("mixup concentration must be positive"));
        }
        if self.batch_size == 0 || self.minibatch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::invalid(
                "batch, minibatch and buffer sizes must be positive",
            ));
        }
        if self.k_min < 2 {
            return Err(Error::invalid("candidate sets need at least two models"));
        }
        if !(self.omega_min >= 0.0 && self.omega_max >= self.omega_min) {
            return Err(Error::invalid(
                "preference range must be a non-negative interval",
            ));
        }
        Ok(())
    }
}

/// One routing decision as stored in the replay buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub prompt: usize,
    pub embedding: Vec<f64>,
    /// Pool positions of the candidates, in context order.
    pub set: Vec<usize>,
    pub context: CandidateContext,
    pub omega: f64,
    pub action: usize,
    /// Probability of `action` under the collecting policy.
    pub old_prob: f64,
    /// `[normalized score, -normalized cost]` of the chosen model.
    pub reward: [f64; 2],
    pub uses: usize,
}

/// A transition prepared for a PPO update, possibly mixed with a neighbor.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub embedding: Vec<f64>,
    pub context: CandidateContext,
    pub omega: f64,
    pub action: usize,
    pub old_prob: f64,
    pub advantage: [f64; 2],
    pub value_target: [f64; 2],
}

/// Fixed-capacity FIFO of recent transitions.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.entries[i]
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    /// Up to `n` distinct entries that have been used fewer than `max_reuse`
    /// times; their use counts are incremented.
    pub fn sample_fresh<R: Rng + ?Sized>(
        &mut self,
        n: usize,
        max_reuse: usize,
        rng: &mut R,
    ) -> Vec<usize> {
        let fresh: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].uses < max_reuse)
            .collect();
        let take = n.min(fresh.len());
        let mut picked: Vec<usize> = index::sample(rng, fresh.len(), take)
            .into_iter()
            .map(|j| fresh[j])
            .collect();
        picked.sort_unstable();
        for &i in &picked {
            self.entries[i].uses += 1;
        }
        picked
    }

    /// Closest other entry by Euclidean embedding distance; ties go to the
    /// lower index.
    pub fn nearest(&self, i: usize) -> Option<usize> {
        let e = &self.entries[i].embedding;
        let mut best: Option<(f64, usize)> = None;
        for (j, t) in self.entries.iter().enumerate() {
            if j == i {
                continue;
            }
            let d: f64 = t
                .embedding
                .iter()
                .zip(e)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        best.map(|(_, j)| j)
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Samples `batch_size` routing decisions: for each, a prompt, a candidate
/// set of the batch's size `K`, a preference and an action from the policy.
pub fn collect_transitions<R: Rng + ?Sized>(
    policy: &RoutingPolicy,
    table: &RoutingTable,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    let pool = table.n_models();
    let k_max = config.k_max.unwrap_or(pool).min(pool);
    if config.k_min > k_max {
        return Err(Error::invalid(format!(
            "pool of {pool} models cannot form sets of {}",
            config.k_min
        )));
    }
    let k = rng.random_range(config.k_min..=k_max);
    let mut prompts = Vec::with_capacity(config.batch_size);
    let mut sets = Vec::with_capacity(config.batch_size);
    let mut omegas = Vec::with_capacity(config.batch_size);
    let mut contexts = Vec::with_capacity(config.batch_size);
    let mut scores = Vec::with_capacity(config.batch_size);
    let mut attempts = 0;
    while prompts.len() < config.batch_size {
        attempts += 1;
        if attempts > 100 * config.batch_size {
            return Err(Error::invalid(
                "too few prompts with complete scores for the model pool",
            ));
        }
        let n = rng.random_range(0..table.n_prompts());
        let set: Vec<usize> = index::sample(rng, pool, k).into_vec();
        let Some(s) = table.normalized_scores(n, &set) else {
            continue;
        };
        let omega = config
            .fixed_omega
            .unwrap_or_else(|| rng.random_range(config.omega_min..=config.omega_max));
        contexts.push(table.context(n, &set, config.use_predicted_scores)?);
        prompts.push(n);
        sets.push(set);
        omegas.push(omega);
        scores.push(s);
    }
    let mut emb = Array2::zeros((prompts.len(), table.embeddings.ncols()));
    for (i, &n) in prompts.iter().enumerate() {
        emb.row_mut(i).assign(&table.embeddings.row(n));
    }
    let refs: Vec<&CandidateContext> = contexts.iter().collect();
    let (out, _) = policy.forward(emb.view(), &refs, &omegas)?;
    let mut batch = Vec::with_capacity(prompts.len());
    for (i, ctx) in contexts.into_iter().enumerate() {
        let a = sample_categorical(&out.probs[i], rng);
        let reward = [scores[i][a], -ctx.costs[a]];
        batch.push(Transition {
            prompt: prompts[i],
            embedding: emb.row(i).to_vec(),
            set: sets[i].clone(),
            omega: omegas[i],
            action: a,
            old_prob: out.probs[i][a],
            reward,
            context: ctx,
            uses: 0,
        });
    }
    Ok(batch)
}

/// Generalized advantage estimation over one trajectory of vector rewards.
/// `values` holds `V(s_t)`; the state after the last step is terminal.
pub fn gae(
    rewards: &[[f64; 2]],
    values: &[[f64; 2]],
    gamma: f64,
    lambda: f64,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let t_len = rewards.len();
    let mut adv = vec![[0.0; 2]; t_len];
    let mut targets = vec![[0.0; 2]; t_len];
    let mut running = [0.0; 2];
    for t in (0..t_len).rev() {
        for c in 0..2 {
            let next = if t + 1 < t_len { values[t + 1][c] } else { 0.0 };
            let delta = rewards[t][c] + gamma * next - values[t][c];
            running[c] = if t + 1 < t_len {
                delta + gamma * lambda * running[c]
            } else {
                delta
            };
            adv[t][c] = running[c];
            targets[t][c] = if t + 1 < t_len {
                adv[t][c] + values[t][c]
            } else {
                rewards[t][c]
            };
        }
    }
    (adv, targets)
}

/// Fills advantages and value targets with the current value net. Routing is
/// a single step, so `A = r - V` and `V_targ = r`.
pub fn compute_advantages(
    policy: &RoutingPolicy,
    value: &ValueNet,
    transitions: &[&Transition],
    config: &PpoConfig,
) -> Result<Vec<TrainItem>> {
    if transitions.is_empty() {
        return Ok(Vec::new());
    }
    let d = transitions[0].embedding.len();
    let mut emb = Array2::zeros((transitions.len(), d));
    for (i, t) in transitions.iter().enumerate() {
        emb.row_mut(i)
            .assign(&ndarray::ArrayView1::from(&t.embedding[..]));
    }
    let refs: Vec<&CandidateContext> = transitions.iter().map(|t| &t.context).collect();
    let omegas: Vec<f64> = transitions.iter().map(|t| t.omega).collect();
    let (out, _) = policy.forward(emb.view(), &refs, &omegas)?;
    let v = value.predict(emb.view(), out.summary.view())?;
    Ok(transitions
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (a, tg) = gae(
                &[t.reward],
                &[[v[[i, 0]], v[[i, 1]]]],
                config.gamma,
                config.gae_lambda,
            );
            TrainItem {
                embedding: t.embedding.clone(),
                context: t.context.clone(),
                omega: t.omega,
                action: t.action,
                old_prob: t.old_prob,
                advantage: a[0],
                value_target: tg[0],
            }
        })
        .collect())
}

/// Interpolates `a` with its neighbor `b`. Continuous quantities are mixed
/// with weight `lambda`; the discrete action, candidate set and preference
/// come from `a` when `lambda > 0.5` and from `b` otherwise.
pub fn mixup_pair(a: &TrainItem, b: &TrainItem, lambda: f64) -> TrainItem {
    let mix = |x: f64, y: f64| lambda * x + (1.0 - lambda) * y;
    let major = if lambda > 0.5 { a } else { b };
    TrainItem {
        embedding: a
            .embedding
            .iter()
            .zip(&b.embedding)
            .map(|(&x, &y)| mix(x, y))
            .collect(),
        context: major.context.clone(),
        omega: major.omega,
        action: major.action,
        old_prob: mix(a.old_prob, b.old_prob),
        advantage: [
            mix(a.advantage[0], b.advantage[0]),
            mix(a.advantage[1], b.advantage[1]),
        ],
        value_target: [
            mix(a.value_target[0], b.value_target[0]),
            mix(a.value_target[1], b.value_target[1]),
        ],
    }
}

/// Mixes every item with its neighbor using `lambda ~ Beta(xi, xi)`.
pub fn mixup_batch<R: Rng + ?Sized>(
    items: &[TrainItem],
    neighbors: &[TrainItem],
    xi: f64,
    rng: &mut R,
) -> Result<Vec<TrainItem>> {
    let beta = Beta::new(xi, xi).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(items
        .iter()
        .zip(neighbors)
        .map(|(a, b)| mixup_pair(a, b, beta.sample(rng)))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoLosses {
    /// Mean clipped surrogate (to be maximized).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `-surrogate + value_coef * value_loss - entropy_coef * entropy`.
    pub total: f64,
    /// Items skipped because their probability ratio was not finite.
    pub dropped: usize,
}

/// Losses and gradients of one PPO minibatch.
pub fn ppo_loss_and_grads(
    policy: &RoutingPolicy,
    value: &ValueNet,
    items: &[&TrainItem],
    config: &PpoConfig,
) -> Result<(PpoLosses, PolicyGrads, Gradients)> {
    let b = items.len();
    if b == 0 {
        return Err(Error::invalid("empty PPO minibatch"));
    }
    let d = items[0].embedding.len();
    let mut emb = Array2::zeros((b, d));
    for (i, t) in items.iter().enumerate() {
        emb.row_mut(i)
            .assign(&ndarray::ArrayView1::from(&t.embedding[..]));
    }
    let refs: Vec<&CandidateContext> = items.iter().map(|t| &t.context).collect();
    let omegas: Vec<f64> = items.iter().map(|t| t.omega).collect();
    let (out, cache) = policy.forward(emb.view(), &refs, &omegas)?;

    let mut losses = PpoLosses::default();
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(b);
    let valid: Vec<bool> = items
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let ratio = out.probs[i][t.action] / t.old_prob;
            ratio.is_finite() && t.old_prob > 0.0
        })
        .collect();
    let m = valid.iter().filter(|&&v| v).count();
    losses.dropped = b - m;
    let inv = if m > 0 { 1.0 / m as f64 } else { 0.0 };
    for (i, t) in items.iter().enumerate() {
        let p = &out.probs[i];
        let mut g = vec![0.0; p.len()];
        if valid[i] {
            let adv = Preference {
                omega_cost: t.omega,
            }
            .scalarize(t.advantage);
            let ratio = p[t.action] / t.old_prob;
            let clipped = ratio.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps);
            let (unc, cl) = (ratio * adv, clipped * adv);
            losses.surrogate += unc.min(cl) * inv;
            if unc <= cl {
                for (k, gk) in g.iter_mut().enumerate() {
                    let delta = f64::from(u8::from(k == t.action));
                    *gk -= adv * ratio * (delta - p[k]) * inv;
                }
            }
            let h: f64 = -p
                .iter()
                .map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 })
                .sum::<f64>();
            losses.entropy += h * inv;
            if config.entropy_coef != 0.0 {
                for (k, gk) in g.iter_mut().enumerate() {
                    let lq = if p[k] > 0.0 { p[k].ln() } else { 0.0 };
                    *gk += config.entropy_coef * p[k] * (lq + h) * inv;
                }
            }
        }
        grads.push(g);
    }
    let pg = policy.backward(&cache, &grads)?;

    let (v, vcache) = value.forward(emb.view(), out.summary.view())?;
    let mut dv = Array2::zeros((b, 2));
    for (i, t) in items.iter().enumerate() {
        for c in 0..2 {
            let diff = v[[i, c]] - t.value_target[c];
            losses.value_loss += diff * diff / b as f64;
            dv[[i, c]] = config.value_coef * 2.0 * diff / b as f64;
        }
    }
    let vg = value.backward(&vcache, dv.view())?;
    losses.total = -losses.surrogate + config.value_coef * losses.value_loss
        - config.entropy_coef * losses.entropy;
    if !losses.total.is_finite() {
        return Err(Error::Divergence(format!("PPO loss is {}", losses.total)));
    }
    Ok((losses, pg, vg))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub losses: Vec<PpoLosses>,
    pub dropped: usize,
}

/// Optimizer state of a policy/value pair under PPO.
pub struct PpoOptimizers {
    pub policy: Adam,
    pub value: Adam,
}

impl PpoOptimizers {
    pub fn new(lr: f64) -> Self {
        PpoOptimizers {
            policy: Adam::new(AdamConfig::with_lr(lr)),
            value: Adam::new(AdamConfig::with_lr(lr)),
        }
    }
}

/// Runs `config.epochs` passes of shuffled minibatch updates over `items`.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut RoutingPolicy,
    value: &mut ValueNet,
    opt: &mut PpoOptimizers,
    items: &[TrainItem],
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    let mut stats = PpoStats::default();
    let mut order: Vec<usize> = (0..items.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let mb: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            let (l, mut pg, mut vg) = ppo_loss_and_grads(policy, value, &mb, config)?;
            stats.dropped += l.dropped;
            stats.losses.push(l);
            clip_global_norm(&mut pg.slices_mut(), config.grad_clip);
            clip_global_norm(&mut vg.slices_mut(), config.grad_clip);
            opt.policy.step(&mut policy.params_mut(), &pg.slices())?;
            opt.value.step(&mut value.net.params_mut(), &vg.slices())?;
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyTrainLog {
    /// Mean scalarized reward of each collected batch.
    pub step_returns: Vec<f64>,
    pub value_losses: Vec<f64>,
    pub dropped: usize,
}

/// Alternates collection into the replay buffer with PPO updates on fresh
/// buffer entries, optionally mixed with their nearest neighbors.
pub fn train_policy(
    mut policy: RoutingPolicy,
    mut value: ValueNet,
    table: &RoutingTable,
    config: &PpoConfig,
) -> Result<(RoutingPolicy, ValueNet, PolicyTrainLog)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut opt = PpoOptimizers::new(config.lr);
    let mut log = PolicyTrainLog::default();
    for step in 0..config.steps {
        let batch = collect_transitions(&policy, table, config, &mut rng)?;
        let ret = batch
            .iter()
            .map(|t| {
                Preference {
                    omega_cost: t.omega,
                }
                .scalarize(t.reward)
            })
            .sum::<f64>()
            / batch.len() as f64;
        log.step_returns.push(ret);
        for t in batch {
            buffer.push(t);
        }
        let picked = buffer.sample_fresh(config.batch_size, config.max_reuse, &mut rng);
        let trans: Vec<&Transition> = picked.iter().map(|&i| buffer.get(i)).collect();
        let mut items = compute_advantages(&policy, &value, &trans, config)?;
        if config.mixup && buffer.len() >= 2 {
            let nb: Vec<&Transition> = picked
                .iter()
                .map(|&i| buffer.get(buffer.nearest(i).expect("buffer holds another entry")))
                .collect();
            let nb_items = compute_advantages(&policy, &value, &nb, config)?;
            items = mixup_batch(&items, &nb_items, config.mixup_xi, &mut rng)?;
        }
        let stats = ppo_update(&mut policy, &mut value, &mut opt, &items, config, &mut rng)
            .map_err(|e| Error::Divergence(format!("policy step {step}: {e}")))?;
        log.dropped += stats.dropped;
        if let Some(l) = stats.losses.last() {
            log.value_losses.push(l.value_loss);
        }
    }
    Ok((policy, value, log))
}
