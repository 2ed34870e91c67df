//! Planted-factor synthetic leaderboards.
//!
//! Each prompt has a latent factor `b_n ∈ R^r` and an embedding `e_n = A b_n`
//! with a random `d_e × r` map `A`. Each model has a factor `a_k` and a bias;
//! its planted success probability on prompt `n` is
//! `logistic((a_k · b_n + bias_k) / noise)`, degenerating to a step at zero
//! noise. Costs grow exponentially with the bias so stronger models are
//! pricier.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EvaluationScore, ModelRecord, PairwiseComparison, PromptRecord};
use crate::error::{Error, Result};
use crate::nnkernel::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_models: usize,
    pub n_prompts: usize,
    pub latent_rank: usize,
    pub embedding_dim: usize,
    /// Temperature of the planted logistic link; 0 makes outcomes deterministic.
    pub noise: f64,
    /// Standard deviation of the prompt-dependent part of each model's logit.
    pub interaction_scale: f64,
    /// Model biases are drawn uniformly from `[-ability_spread, ability_spread]`.
    pub ability_spread: f64,
    pub n_pairwise: usize,
    /// Sharpness of the synthetic pairwise judge.
    pub pairwise_sharpness: f64,
    pub cost_base: f64,
    pub cost_slope: f64,
    pub cost_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_models: 10,
            n_prompts: 2000,
            latent_rank: 8,
            embedding_dim: 32,
            noise: 0.5,
            interaction_scale: 1.5,
            ability_spread: 1.5,
            n_pairwise: 4000,
            pairwise_sharpness: 4.0,
            cost_base: 5.0,
            cost_slope: 1.5,
            cost_jitter: 0.2,
            seed: 7,
        }
    }
}

/// Ground truth behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticTruth {
    /// `probabilities[k][n]`, model-major in dataset order.
    #[serde(skip)]
    pub probabilities: Vec<Vec<f64>>,
    /// Mean planted success probability per model.
    #[serde(with = "crate::real17::vec")]
    pub abilities: Vec<f64>,
    #[serde(with = "crate::real17::vec")]
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: SyntheticTruth,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.latent_rank == 0 || spec.latent_rank > spec.embedding_dim {
        return Err(Error::invalid(format!(
            "latent rank {} must lie in 1..={}",
            spec.latent_rank, spec.embedding_dim
        )));
    }
    if spec.n_models < 2 || spec.n_prompts == 0 {
        return Err(Error::invalid("need at least two models and one prompt"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::invalid("noise must be a non-negative real"));
    }
    if spec.cost_base.is_nan() || spec.cost_base <= 0.0 {
        return Err(Error::invalid("cost_base must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.latent_rank;
    let de = spec.embedding_dim;

    let a_map: Vec<f64> = (0..de * r)
        .map(|_| normal(&mut rng) / (r as f64).sqrt())
        .collect();
    let mut prompts = Vec::with_capacity(spec.n_prompts);
    let mut factors = Vec::with_capacity(spec.n_prompts);
    for n in 0..spec.n_prompts {
        let b: Vec<f64> = (0..r).map(|_| normal(&mut rng)).collect();
        let e: Vec<f64> = (0..de)
            .map(|i| (0..r).map(|j| a_map[i * r + j] * b[j]).sum())
            .collect();
        prompts.push(PromptRecord {
            prompt_id: format!("p{n:05}"),
            embedding: e,
        });
        factors.push(b);
    }

    let mut model_factors = Vec::with_capacity(spec.n_models);
    let mut biases = Vec::with_capacity(spec.n_models);
    for _ in 0..spec.n_models {
        let a: Vec<f64> = (0..r)
            .map(|_| spec.interaction_scale * normal(&mut rng) / (r as f64).sqrt())
            .collect();
        model_factors.push(a);
        biases.push(rng.random_range(-spec.ability_spread..=spec.ability_spread));
    }

    let link = |logit: f64| -> f64 {
        if spec.noise > 0.0 {
            sigmoid(logit / spec.noise)
        } else if logit > 0.0 {
            1.0
        } else if logit < 0.0 {
            0.0
        } else {
            0.5
        }
    };
    let probabilities: Vec<Vec<f64>> = (0..spec.n_models)
        .map(|k| {
            factors
                .iter()
                .map(|b| {
                    let dot: f64 = model_factors[k].iter().zip(b).map(|(x, y)| x * y).sum();
                    link(dot + biases[k])
                })
                .collect()
        })
        .collect();
    let abilities: Vec<f64> = probabilities
        .iter()
        .map(|p| p.iter().sum::<f64>() / p.len() as f64)
        .collect();

    let models: Vec<ModelRecord> = (0..spec.n_models)
        .map(|k| {
            let z = if spec.ability_spread > 0.0 {
                biases[k] / spec.ability_spread
            } else {
                0.0
            };
            let cost =
                spec.cost_base * (spec.cost_slope * z + spec.cost_jitter * normal(&mut rng)).exp();
            ModelRecord {
                model_id: format!("m{k:03}"),
                cost,
            }
        })
        .collect();

    let mut scores = Vec::with_capacity(spec.n_models * spec.n_prompts);
    for (k, m) in models.iter().enumerate() {
        for (n, p) in prompts.iter().enumerate() {
            let u: f64 = rng.random();
            let y = u8::from(u < probabilities[k][n]);
            scores.push(EvaluationScore {
                model_id: m.model_id.clone(),
                prompt_id: p.prompt_id.clone(),
                raw_score: y as f64,
                binary_score: y,
            });
        }
    }

    let mut pairwise = Vec::with_capacity(spec.n_pairwise);
    for _ in 0..spec.n_pairwise {
        let n = rng.random_range(0..spec.n_prompts);
        let a = rng.random_range(0..spec.n_models);
        let mut b = rng.random_range(0..spec.n_models - 1);
        if b >= a {
            b += 1;
        }
        let p_win = sigmoid(spec.pairwise_sharpness * (probabilities[a][n] - probabilities[b][n]));
        let u: f64 = rng.random();
        pairwise.push(PairwiseComparison {
            prompt_id: prompts[n].prompt_id.clone(),
            model_a: models[a].model_id.clone(),
            model_b: models[b].model_id.clone(),
            winner: u8::from(u < p_win),
        });
    }

    Ok(SyntheticData {
        dataset: Dataset {
            prompts,
            models,
            scores,
            pairwise,
            threshold: Some(0.0),
        },
        truth: SyntheticTruth {
            probabilities,
            abilities,
            biases,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_models: 4,
            n_prompts: 50,
            n_pairwise: 30,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_hash() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        assert_eq!(a.dataset.content_hash(), b.dataset.content_hash());
        let c = gen_synthetic(&SyntheticSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.dataset.content_hash(), c.dataset.content_hash());
        a.dataset.validate().unwrap();
    }

    #[test]
    fn rank_above_embedding_dim_rejected() {
        let spec = SyntheticSpec {
            latent_rank: 40,
            embedding_dim: 32,
            ..small()
        };
        assert!(gen_synthetic(&spec).is_err());
    }

    #[test]
    fn zero_noise_is_deterministic_step() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..small()
        };
        let g = gen_synthetic(&spec).unwrap();
        let table = g.dataset.score_table();
        for k in 0..spec.n_models {
            for n in 0..spec.n_prompts {
                let p = g.truth.probabilities[k][n];
                if p == 1.0 {
                    assert_eq!(table.binary(k, n), Some(1));
                } else if p == 0.0 {
                    assert_eq!(table.binary(k, n), Some(0));
                }
            }
        }
        let extremes = g
            .truth
            .probabilities
            .iter()
            .flatten()
            .filter(|&&p| p == 0.0 || p == 1.0)
            .count();
        assert_eq!(extremes, spec.n_models * spec.n_prompts);
    }

    #[test]
    fn costs_track_ability() {
        let spec = SyntheticSpec {
            n_models: 12,
            n_prompts: 200,
            cost_jitter: 0.0,
            ..SyntheticSpec::default()
        };
        let g = gen_synthetic(&spec).unwrap();
        let mut by_bias: Vec<(f64, f64)> = g
            .truth
            .biases
            .iter()
            .zip(&g.dataset.models)
            .map(|(&b, m)| (b, m.cost))
            .collect();
        by_bias.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(by_bias.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}
