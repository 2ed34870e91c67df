use ndarray::Array2;

use super::{CandidateContext, Preference};
use crate::data::{normalize_max, Dataset};
use crate::error::{Error, Result};
use crate::irt::{embedding_matrix, IrtModel};
use crate::nnkernel::sigmoid;

/// A routable model: its posterior-mean identity and raw cost.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolModel {
    pub model_id: String,
    pub identity: Vec<f64>,
    pub cost: f64,
}

impl PoolModel {
    /// Looks up identities in `irt` and costs in `dataset` for the given ids.
    pub fn from_irt(irt: &IrtModel, dataset: &Dataset, ids: &[String]) -> Result<Vec<PoolModel>> {
        ids.iter()
            .map(|id| {
                let identity = irt
                    .identity(id)
                    .ok_or_else(|| Error::invalid(format!("no identity for model {id}")))?;
                let cost = dataset
                    .model(id)
                    .ok_or_else(|| Error::invalid(format!("no cost for model {id}")))?
                    .cost;
                Ok(PoolModel {
                    model_id: id.clone(),
                    identity: identity.mean.clone(),
                    cost,
                })
            })
            .collect()
    }
}

/// Everything routing needs about one split and one model pool, precomputed:
/// prompt embeddings, score-head logits at posterior means, and true scores.
#[derive(Clone, Debug)]
pub struct RoutingTable {
    pub prompt_ids: Vec<String>,
    pub embeddings: Array2<f64>,
    pub pool: Vec<PoolModel>,
    /// `prompt × model` score-head logits.
    pub logits: Array2<f64>,
    /// `prompt × model` raw scores; NaN where missing.
    pub scores: Array2<f64>,
}

impl RoutingTable {
    pub fn build(irt: &IrtModel, dataset: &Dataset, pool: Vec<PoolModel>) -> Result<Self> {
        if pool.len() < 2 {
            return Err(Error::invalid("a model pool needs at least two models"));
        }
        let embeddings = embedding_matrix(dataset);
        let n = dataset.prompts.len();
        let mut logits = Array2::zeros((n, pool.len()));
        let mut scores = Array2::from_elem((n, pool.len()), f64::NAN);
        let table = dataset.score_table();
        let mi = dataset.model_index();
        for (k, m) in pool.iter().enumerate() {
            let z = irt.score_logits(embeddings.view(), &m.identity)?;
            for (i, v) in z.into_iter().enumerate() {
                logits[[i, k]] = v;
            }
            if let Some(&dm) = mi.get(m.model_id.as_str()) {
                for i in 0..n {
                    if let Some(s) = table.raw(dm, i) {
                        scores[[i, k]] = s;
                    }
                }
            }
        }
        Ok(RoutingTable {
            prompt_ids: dataset
                .prompts
                .iter()
                .map(|p| p.prompt_id.clone())
                .collect(),
            embeddings,
            pool,
            logits,
            scores,
        })
    }

    pub fn n_prompts(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn n_models(&self) -> usize {
        self.pool.len()
    }

    pub fn model_position(&self, model_id: &str) -> Option<usize> {
        self.pool.iter().position(|m| m.model_id == model_id)
    }

    pub fn p_hat(&self, prompt: usize, model: usize) -> f64 {
        sigmoid(self.logits[[prompt, model]])
    }

    pub fn raw_costs(&self, set: &[usize]) -> Vec<f64> {
        set.iter().map(|&k| self.pool[k].cost).collect()
    }

    /// Routing context of `prompt` over the models in `set`. With
    /// `use_predicted_scores` off every predicted score is replaced by 0.
    pub fn context(
        &self,
        prompt: usize,
        set: &[usize],
        use_predicted_scores: bool,
    ) -> Result<CandidateContext> {
        CandidateContext::new(
            set.iter().map(|&k| self.pool[k].identity.clone()).collect(),
            &self.raw_costs(set),
            set.iter()
                .map(|&k| {
                    if use_predicted_scores {
                        self.p_hat(prompt, k)
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }

    /// Raw scores of `set` on `prompt`, or `None` when any is missing.
    pub fn true_scores(&self, prompt: usize, set: &[usize]) -> Option<Vec<f64>> {
        let s: Vec<f64> = set.iter().map(|&k| self.scores[[prompt, k]]).collect();
        s.iter().all(|v| !v.is_nan()).then_some(s)
    }

    /// Set-normalized true scores.
    pub fn normalized_scores(&self, prompt: usize, set: &[usize]) -> Option<Vec<f64>> {
        self.true_scores(prompt, set).map(|s| normalize_max(&s))
    }

    /// Restricts the pool to the given positions, in that order.
    pub fn subset(&self, set: &[usize]) -> RoutingTable {
        let n = self.n_prompts();
        let mut logits = Array2::zeros((n, set.len()));
        let mut scores = Array2::zeros((n, set.len()));
        for (j, &k) in set.iter().enumerate() {
            logits.column_mut(j).assign(&self.logits.column(k));
            scores.column_mut(j).assign(&self.scores.column(k));
        }
        RoutingTable {
            prompt_ids: self.prompt_ids.clone(),
            embeddings: self.embeddings.clone(),
            pool: set.iter().map(|&k| self.pool[k].clone()).collect(),
            logits,
            scores,
        }
    }
}

/// Index maximizing `ω · [score, -cost]`; exact ties go to the lower cost,
/// then to the lexicographically smaller id.
pub fn preferred_action(scores: &[f64], costs: &[f64], ids: &[&str], pref: Preference) -> usize {
    let mut best = 0;
    let util = |k: usize| pref.scalarize([scores[k], -costs[k]]);
    for k in 1..scores.len() {
        let (u, ub) = (util(k), util(best));
        let better = u > ub
            || (u == ub
                && (costs[k] < costs[best] || (costs[k] == costs[best] && ids[k] < ids[best])));
        if better {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utility_crossover() {
        let s = [1.0, 0.5];
        let c = [1.0, 0.012];
        let ids = ["a", "b"];
        assert_eq!(
            preferred_action(&s, &c, &ids, Preference::new(0.5).unwrap()),
            0
        );
        assert_eq!(
            preferred_action(&s, &c, &ids, Preference::new(1.0).unwrap()),
            1
        );
        let crossover = (s[0] - s[1]) / (c[0] - c[1]);
        assert_eq!(
            preferred_action(&s, &c, &ids, Preference::new(crossover + 1e-9).unwrap()),
            1
        );
        assert_eq!(
            preferred_action(&s, &c, &ids, Preference::new(crossover - 1e-9).unwrap()),
            0
        );
    }

    #[test]
    fn ties_prefer_cheaper_then_smaller_id() {
        let w = Preference::new(0.0).unwrap();
        assert_eq!(
            preferred_action(&[0.5, 0.5], &[1.0, 0.3], &["a", "b"], w),
            1
        );
        assert_eq!(
            preferred_action(&[0.5, 0.5], &[0.3, 0.3], &["z", "b"], w),
            1
        );
        assert_eq!(
            preferred_action(&[0.5, 0.5], &[0.3, 0.3], &["b", "z"], w),
            0
        );
    }
}
