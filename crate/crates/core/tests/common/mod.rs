//! Shared fixtures: central-difference gradient checks over random draws.
#![allow(dead_code)]

use ndarray::Array2;
use prefroute::coldstart::identity_objective;
use prefroute::irt::{irt_loss_with_noise, IrtModel, PairItem, ScoreItem};
use prefroute::policy::{
    ppo_loss_and_grads, CandidateContext, PpoConfig, RoutingPolicy, TrainItem, ValueNet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const FD_DRAWS: usize = 100;

/// Worst relative error over all draws of one check.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel: f64,
    pub draws: usize,
    pub coords: usize,
    /// Draws replaced because a ReLU kink lay within `FD_EPS` of a probe.
    pub skipped: usize,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.draws >= FD_DRAWS && self.max_rel < FD_TOL && self.skipped * 10 <= self.draws
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied())
        .max(norm(&mut n.iter().copied()))
        .max(1e-10);
    diff / scale
}

/// Up to `per_tensor` random coordinates of every tensor.
/// Zero-initialized biases put rows whose inputs are all dead exactly on a
/// ReLU kink; jittering every parameter moves the check off it.
fn jitter(params: Vec<&mut [f64]>, rng: &mut ChaCha8Rng) {
    for p in params {
        for v in p {
            *v += 0.1 * normal(rng);
        }
    }
}

fn pick(sizes: &[usize], per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (t, &n) in sizes.iter().enumerate() {
        if n <= per_tensor {
            out.extend((0..n).map(|i| (t, i)));
        } else {
            out.extend((0..per_tensor).map(|_| (t, rng.random_range(0..n))));
        }
    }
    out
}

/// Central differences of `loss` at the given coordinates of `params(model)`,
/// or `None` when one-sided differences disagree, i.e. a kink lies within
/// `FD_EPS` of some probe.
fn numeric<M: Clone>(
    model: &M,
    params: for<'a> fn(&'a mut M) -> Vec<&'a mut [f64]>,
    coords: &[(usize, usize)],
    loss: &dyn Fn(&M) -> f64,
) -> Option<Vec<f64>> {
    let base = loss(model);
    coords
        .iter()
        .map(|&(t, i)| {
            let mut plus = model.clone();
            params(&mut plus)[t][i] += FD_EPS;
            let mut minus = model.clone();
            params(&mut minus)[t][i] -= FD_EPS;
            let (lp, lm) = (loss(&plus), loss(&minus));
            let asym = ((lp - base) - (base - lm)).abs();
            (asym <= 1e-2 * (lp - lm).abs().max(1e-9)).then(|| (lp - lm) / (2.0 * FD_EPS))
        })
        .collect()
}

/// Runs `draw` on successive seeds until `FD_DRAWS` draws are smooth.
/// Each draw yields `(analytic, numeric)` at its probed coordinates.
fn run_draws(
    seed_base: u64,
    draw: impl Fn(&mut ChaCha8Rng) -> (Vec<f64>, Option<Vec<f64>>),
) -> GradReport {
    let mut report = GradReport {
        max_rel: 0.0,
        draws: 0,
        coords: 0,
        skipped: 0,
    };
    let mut seed = seed_base;
    while report.draws < FD_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seed += 1;
        match draw(&mut rng) {
            (analytic, Some(num)) => {
                report.max_rel = report.max_rel.max(rel_error(&analytic, &num));
                report.coords += num.len();
                report.draws += 1;
            }
            (_, None) => report.skipped += 1,
        }
    }
    report
}

fn irt_params(m: &mut IrtModel) -> Vec<&mut [f64]> {
    m.params_mut()
}

fn small_irt(rng: &mut ChaCha8Rng) -> IrtModel {
    let ids: Vec<String> = (0..3).map(|i| format!("m{i}")).collect();
    let init_lv = rng.random_range(-2.0..0.0);
    let mut m = IrtModel::new(4, 3, &[6, 6], &ids, init_lv, rng).unwrap();
    jitter(m.params_mut(), rng);
    for id in &mut m.identities {
        for v in &mut id.mean {
            *v = normal(rng);
        }
    }
    m
}

/// Item-response loss with scores only (`pairs = false`) or comparisons
/// only: exercises the score head f or the pairwise head g, the shared
/// backbone and the identity means and log-variances.
pub fn check_irt(pairs: bool) -> GradReport {
    run_draws(1000 + if pairs { 50_000 } else { 0 }, |rng| {
        let model = small_irt(rng);
        let emb = Array2::from_shape_fn((5, 4), |_| normal(rng));
        let (scores, pair_items): (Vec<ScoreItem>, Vec<PairItem>) = if pairs {
            let p = (0..6)
                .map(|_| {
                    let a = rng.random_range(0..3);
                    PairItem {
                        prompt: rng.random_range(0..5),
                        a,
                        b: (a + rng.random_range(1..3)) % 3,
                        z: f64::from(rng.random_range(0..2u8)),
                    }
                })
                .collect();
            (Vec::new(), p)
        } else {
            let s = (0..6)
                .map(|_| ScoreItem {
                    prompt: rng.random_range(0..5),
                    model: rng.random_range(0..3),
                    y: f64::from(rng.random_range(0..2u8)),
                })
                .collect();
            (s, Vec::new())
        };
        let noise: Vec<f64> = (0..model.noise_len(scores.len(), pair_items.len()))
            .map(|_| normal(rng))
            .collect();
        let kl_weight = rng.random_range(0.05..1.0);
        let loss = |m: &IrtModel| {
            irt_loss_with_noise(m, emb.view(), &scores, &pair_items, kl_weight, &noise)
                .unwrap()
                .0
                .total
        };
        let (_, grads) =
            irt_loss_with_noise(&model, emb.view(), &scores, &pair_items, kl_weight, &noise)
                .unwrap();
        let analytic_all = grads.slices();
        let mut probe = model.clone();
        let sizes: Vec<usize> = probe.params_mut().iter().map(|p| p.len()).collect();
        let coords = pick(&sizes, 6, rng);
        let analytic: Vec<f64> = coords.iter().map(|&(t, i)| analytic_all[t][i]).collect();
        let num = numeric(&model, irt_params, &coords, &loss);
        (analytic, num)
    })
}

#[derive(Clone)]
struct Identity {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

fn identity_params(i: &mut Identity) -> Vec<&mut [f64]> {
    vec![&mut i.mean[..], &mut i.log_var[..]]
}

/// Cold-start objective with respect to a new model's mean and log-variance.
pub fn check_identity_inference() -> GradReport {
    run_draws(7000, |rng| {
        let irt = small_irt(rng);
        let n = rng.random_range(1..8);
        let emb = Array2::from_shape_fn((n, 4), |_| normal(rng));
        let labels: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..2u8)))
            .collect();
        let noise = Array2::from_shape_fn((n, 3), |_| normal(rng));
        let id = Identity {
            mean: (0..3).map(|_| normal(rng)).collect(),
            log_var: (0..3).map(|_| rng.random_range(-2.0..0.5)).collect(),
        };
        let loss = |i: &Identity| {
            identity_objective(&irt, emb.view(), &labels, &i.mean, &i.log_var, noise.view())
                .unwrap()
                .0
        };
        let (_, gm, gl) = identity_objective(
            &irt,
            emb.view(),
            &labels,
            &id.mean,
            &id.log_var,
            noise.view(),
        )
        .unwrap();
        let coords: Vec<(usize, usize)> =
            (0..2).flat_map(|t| (0..3).map(move |i| (t, i))).collect();
        let analytic: Vec<f64> = coords
            .iter()
            .map(|&(t, i)| if t == 0 { gm[i] } else { gl[i] })
            .collect();
        let num = numeric(&id, identity_params, &coords, &loss);
        (analytic, num)
    })
}

fn random_context(k: usize, rng: &mut ChaCha8Rng) -> CandidateContext {
    CandidateContext::new(
        (0..k)
            .map(|_| (0..3).map(|_| normal(rng)).collect())
            .collect(),
        &(0..k)
            .map(|_| rng.random_range(0.5..20.0))
            .collect::<Vec<_>>(),
        (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
    )
    .unwrap()
}

fn policy_params(p: &mut RoutingPolicy) -> Vec<&mut [f64]> {
    p.params_mut()
}

fn value_params(v: &mut ValueNet) -> Vec<&mut [f64]> {
    v.net.params_mut()
}

/// Routing head h (candidate encoder, projections and trunk) under
/// cross-entropy plus a random linear functional of the logits.
pub fn check_policy() -> GradReport {
    run_draws(20_000, |rng| {
        let mut policy = RoutingPolicy::new(4, 3, 5, rng).unwrap();
        jitter(policy.params_mut(), rng);
        let b = 3;
        let ctxs: Vec<CandidateContext> = (0..b)
            .map(|_| {
                let k = rng.random_range(2..5);
                random_context(k, rng)
            })
            .collect();
        let refs: Vec<&CandidateContext> = ctxs.iter().collect();
        let emb = Array2::from_shape_fn((b, 4), |_| normal(rng));
        let omegas: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..2.0)).collect();
        let targets: Vec<usize> = ctxs.iter().map(|c| rng.random_range(0..c.len())).collect();
        let weights: Vec<Vec<f64>> = ctxs
            .iter()
            .map(|c| (0..c.len()).map(|_| normal(rng)).collect())
            .collect();
        let loss = |p: &RoutingPolicy| {
            let (out, _) = p.forward(emb.view(), &refs, &omegas).unwrap();
            out.probs
                .iter()
                .zip(&out.logits)
                .enumerate()
                .map(|(i, (pr, lg))| {
                    -pr[targets[i]].ln()
                        + lg.iter().zip(&weights[i]).map(|(a, w)| a * w).sum::<f64>()
                })
                .sum::<f64>()
        };
        let (out, cache) = policy.forward(emb.view(), &refs, &omegas).unwrap();
        let grad_logits: Vec<Vec<f64>> = out
            .probs
            .iter()
            .enumerate()
            .map(|(i, pr)| {
                pr.iter()
                    .enumerate()
                    .map(|(k, &p)| p - f64::from(u8::from(k == targets[i])) + weights[i][k])
                    .collect()
            })
            .collect();
        let grads = policy.backward(&cache, &grad_logits).unwrap();
        let analytic_all = grads.slices();
        let sizes: Vec<usize> = analytic_all.iter().map(|s| s.len()).collect();
        let coords = pick(&sizes, 6, rng);
        let analytic: Vec<f64> = coords.iter().map(|&(t, i)| analytic_all[t][i]).collect();
        let num = numeric(&policy, policy_params, &coords, &loss);
        (analytic, num)
    })
}

/// Value network under a random linear functional of its two outputs.
pub fn check_value() -> GradReport {
    run_draws(30_000, |rng| {
        let mut value = ValueNet::new(4, 5, 6, rng).unwrap();
        jitter(value.net.params_mut(), rng);
        let emb = Array2::from_shape_fn((4, 4), |_| normal(rng));
        let summary = Array2::from_shape_fn((4, 5), |_| normal(rng));
        let w = Array2::from_shape_fn((4, 2), |_| normal(rng));
        let loss = |v: &ValueNet| (&v.predict(emb.view(), summary.view()).unwrap() * &w).sum();
        let (_, cache) = value.forward(emb.view(), summary.view()).unwrap();
        let grads = value.backward(&cache, w.view()).unwrap();
        let analytic_all = grads.slices();
        let sizes: Vec<usize> = analytic_all.iter().map(|s| s.len()).collect();
        let coords = pick(&sizes, 6, rng);
        let analytic: Vec<f64> = coords.iter().map(|&(t, i)| analytic_all[t][i]).collect();
        let num = numeric(&value, value_params, &coords, &loss);
        (analytic, num)
    })
}

#[derive(Clone)]
struct Pair {
    policy: RoutingPolicy,
    value: ValueNet,
}

fn pair_params(p: &mut Pair) -> Vec<&mut [f64]> {
    let mut out = p.policy.params_mut();
    out.extend(p.value.net.params_mut());
    out
}

/// Full PPO minibatch loss (clipped surrogate plus value loss) with respect
/// to policy and value parameters. Old probabilities keep every ratio
/// strictly inside or strictly outside the clip band.
pub fn check_ppo() -> GradReport {
    let config = PpoConfig::default();
    run_draws(40_000, |rng| {
        let mut policy = RoutingPolicy::new(4, 3, 5, rng).unwrap();
        jitter(policy.params_mut(), rng);
        let mut value = ValueNet::new(4, 5, 6, rng).unwrap();
        jitter(value.net.params_mut(), rng);
        let b = 4;
        let mut items = Vec::new();
        for _ in 0..b {
            let k = rng.random_range(2..5);
            let context = random_context(k, rng);
            let embedding: Vec<f64> = (0..4).map(|_| normal(rng)).collect();
            let omega = rng.random_range(0.0..2.0);
            let action = rng.random_range(0..k);
            let (probs, _) = policy
                .route(
                    &embedding,
                    &context,
                    prefroute::policy::Preference::new(omega).unwrap(),
                )
                .unwrap();
            let ratio = [0.9, 1.05, 1.5, 0.6][rng.random_range(0..4)];
            items.push(TrainItem {
                embedding,
                context,
                omega,
                action,
                old_prob: probs[action] / ratio,
                advantage: [normal(rng), normal(rng)],
                value_target: [rng.random_range(0.0..1.0), -rng.random_range(0.0..1.0)],
            });
        }
        let refs: Vec<&TrainItem> = items.iter().collect();
        let model = Pair { policy, value };
        // The critic reads the policy's set summary as a detached input.
        let emb = Array2::from_shape_fn((b, 4), |(i, j)| items[i].embedding[j]);
        let ctx_refs: Vec<&CandidateContext> = items.iter().map(|t| &t.context).collect();
        let omegas: Vec<f64> = items.iter().map(|t| t.omega).collect();
        let summary = model
            .policy
            .forward(emb.view(), &ctx_refs, &omegas)
            .unwrap()
            .0
            .summary;
        let loss = |m: &Pair| {
            let l = ppo_loss_and_grads(&m.policy, &m.value, &refs, &config)
                .unwrap()
                .0;
            let v = m.value.predict(emb.view(), summary.view()).unwrap();
            let value_loss: f64 = (0..b)
                .flat_map(|i| (0..2).map(move |c| (i, c)))
                .map(|(i, c)| (v[[i, c]] - items[i].value_target[c]).powi(2) / b as f64)
                .sum();
            -l.surrogate - config.entropy_coef * l.entropy + config.value_coef * value_loss
        };
        let (_, pg, vg) = ppo_loss_and_grads(&model.policy, &model.value, &refs, &config).unwrap();
        let mut analytic_all = pg.slices();
        analytic_all.extend(vg.slices());
        let sizes: Vec<usize> = analytic_all.iter().map(|s| s.len()).collect();
        let coords = pick(&sizes, 4, rng);
        let analytic: Vec<f64> = coords.iter().map(|&(t, i)| analytic_all[t][i]).collect();
        let num = numeric(&model, pair_params, &coords, &loss);
        (analytic, num)
    })
}
