//! Records shared by every stage, plus binarization, per-set normalization
//! and prompt-level train/test splitting.

mod io;
mod synthetic;

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{
    load_dataset, load_models, load_pairwise, load_prompts, read_jsonl_lines, write_dataset,
    DataPaths, LoadReport,
};
pub use synthetic::{gen_synthetic, SyntheticData, SyntheticSpec, SyntheticTruth};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    /// Currency per 1M input plus 1M output tokens.
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationScore {
    pub model_id: String,
    pub prompt_id: String,
    pub raw_score: f64,
    pub binary_score: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub prompt_id: String,
    pub model_a: String,
    pub model_b: String,
    /// 1 when `model_a` won.
    pub winner: u8,
}

/// One benchmark's worth of prompts, models, scores and comparisons.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub prompts: Vec<PromptRecord>,
    pub models: Vec<ModelRecord>,
    pub scores: Vec<EvaluationScore>,
    pub pairwise: Vec<PairwiseComparison>,
    /// Binarization threshold applied to the raw scores, if any were loaded.
    pub threshold: Option<f64>,
}

impl Dataset {
    pub fn embedding_dim(&self) -> usize {
        self.prompts.first().map_or(0, |p| p.embedding.len())
    }

    pub fn prompt_index(&self) -> HashMap<&str, usize> {
        self.prompts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.prompt_id.as_str(), i))
            .collect()
    }

    pub fn model_index(&self) -> HashMap<&str, usize> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| (m.model_id.as_str(), i))
            .collect()
    }

    pub fn model(&self, id: &str) -> Option<&ModelRecord> {
        self.models.iter().find(|m| m.model_id == id)
    }

    /// Dense `(model, prompt)` lookup of raw and binary scores.
    pub fn score_table(&self) -> ScoreTable {
        let pi = self.prompt_index();
        let mi = self.model_index();
        let n_prompts = self.prompts.len();
        let mut raw = vec![None; self.models.len() * n_prompts];
        let mut binary = vec![None; self.models.len() * n_prompts];
        for s in &self.scores {
            if let (Some(&m), Some(&p)) =
                (mi.get(s.model_id.as_str()), pi.get(s.prompt_id.as_str()))
            {
                raw[m * n_prompts + p] = Some(s.raw_score);
                binary[m * n_prompts + p] = Some(s.binary_score);
            }
        }
        ScoreTable {
            n_prompts,
            raw,
            binary,
        }
    }

    /// Checks referential integrity and value ranges of an in-memory dataset.
    pub fn validate(&self) -> Result<()> {
        let d = self.embedding_dim();
        let mut seen = HashSet::new();
        for p in &self.prompts {
            if !seen.insert(p.prompt_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate prompt_id {}",
                    p.prompt_id
                )));
            }
            if p.embedding.len() != d || !p.embedding.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("bad embedding for {}", p.prompt_id)));
            }
        }
        let mut seen = HashSet::new();
        for m in &self.models {
            if !seen.insert(m.model_id.as_str()) {
                return Err(Error::invalid(format!("duplicate model_id {}", m.model_id)));
            }
            if !(m.cost > 0.0 && m.cost.is_finite()) {
                return Err(Error::invalid(format!(
                    "cost of {} must be positive",
                    m.model_id
                )));
            }
        }
        let pi = self.prompt_index();
        let mi = self.model_index();
        let mut pairs = HashSet::new();
        for s in &self.scores {
            if !mi.contains_key(s.model_id.as_str()) || !pi.contains_key(s.prompt_id.as_str()) {
                return Err(Error::invalid(format!(
                    "score references unknown ids ({}, {})",
                    s.model_id, s.prompt_id
                )));
            }
            if !(0.0..=1.0).contains(&s.raw_score) || s.binary_score > 1 {
                return Err(Error::invalid("score out of range"));
            }
            if !pairs.insert((s.model_id.as_str(), s.prompt_id.as_str())) {
                return Err(Error::invalid(format!(
                    "duplicate score for ({}, {})",
                    s.model_id, s.prompt_id
                )));
            }
        }
        for c in &self.pairwise {
            if !pi.contains_key(c.prompt_id.as_str())
                || !mi.contains_key(c.model_a.as_str())
                || !mi.contains_key(c.model_b.as_str())
            {
                return Err(Error::invalid("comparison references unknown ids"));
            }
            if c.model_a == c.model_b || c.winner > 1 {
                return Err(Error::invalid("malformed comparison"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSONL rendering of all four collections.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for chunk in io::render_jsonl(self) {
            h.update(chunk.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Keeps only the listed prompts (in their original order), with the
    /// scores and comparisons that reference them.
    pub fn restrict_prompts(&self, keep: &HashSet<&str>) -> Dataset {
        Dataset {
            prompts: self
                .prompts
                .iter()
                .filter(|p| keep.contains(p.prompt_id.as_str()))
                .cloned()
                .collect(),
            models: self.models.clone(),
            scores: self
                .scores
                .iter()
                .filter(|s| keep.contains(s.prompt_id.as_str()))
                .cloned()
                .collect(),
            pairwise: self
                .pairwise
                .iter()
                .filter(|c| keep.contains(c.prompt_id.as_str()))
                .cloned()
                .collect(),
            threshold: self.threshold,
        }
    }

    /// Keeps only the listed models, dropping their scores and comparisons.
    pub fn restrict_models(&self, keep: &HashSet<&str>) -> Dataset {
        Dataset {
            prompts: self.prompts.clone(),
            models: self
                .models
                .iter()
                .filter(|m| keep.contains(m.model_id.as_str()))
                .cloned()
                .collect(),
            scores: self
                .scores
                .iter()
                .filter(|s| keep.contains(s.model_id.as_str()))
                .cloned()
                .collect(),
            pairwise: self
                .pairwise
                .iter()
                .filter(|c| keep.contains(c.model_a.as_str()) && keep.contains(c.model_b.as_str()))
                .cloned()
                .collect(),
            threshold: self.threshold,
        }
    }
}

/// Dense score lookup indexed like the owning dataset's models and prompts.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    n_prompts: usize,
    raw: Vec<Option<f64>>,
    binary: Vec<Option<u8>>,
}

impl ScoreTable {
    pub fn raw(&self, model: usize, prompt: usize) -> Option<f64> {
        self.raw[model * self.n_prompts + prompt]
    }

    pub fn binary(&self, model: usize, prompt: usize) -> Option<u8> {
        self.binary[model * self.n_prompts + prompt]
    }
}

/// Chooses the threshold whose binarized mean best matches the raw mean.
///
/// Candidates are 0, 1 and the midpoints between consecutive distinct raw
/// values; ties go to the smallest candidate. Returns `(threshold, binary)`.
pub fn binarize_scores(scores: &[f64]) -> Result<(f64, Vec<u8>)> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot binarize an empty score list"));
    }
    if !scores.iter().all(|s| (0.0..=1.0).contains(s)) {
        return Err(Error::invalid("scores must lie in [0, 1]"));
    }
    let candidates = threshold_candidates(scores);
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let mut best = (f64::INFINITY, 0.0);
    for &eta in &candidates {
        let obj = binarization_objective(scores, mean, eta);
        if obj < best.0 {
            best = (obj, eta);
        }
    }
    let eta = best.1;
    Ok((eta, scores.iter().map(|&y| u8::from(y > eta)).collect()))
}

/// `{0, 1} ∪ midpoints of sorted distinct values`, ascending.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(|a, b| a.total_cmp(b));
    uniq.dedup();
    let mut c = vec![0.0];
    c.extend(uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    c.push(1.0);
    c.sort_by(|a, b| a.total_cmp(b));
    c.dedup();
    c
}

pub fn binarization_objective(scores: &[f64], mean: f64, eta: f64) -> f64 {
    let frac = scores.iter().filter(|&&y| y > eta).count() as f64 / scores.len() as f64;
    (frac - mean) * (frac - mean)
}

/// Divides scores and costs by their respective maxima within one candidate set.
/// All-zero scores normalize to all zeros.
pub fn normalize_set(scores: &[f64], costs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != costs.len() {
        return Err(Error::DimensionMismatch {
            what: "normalize_set",
            expected: scores.len(),
            got: costs.len(),
        });
    }
    if scores.len() < 2 {
        return Err(Error::invalid("a candidate set needs at least two models"));
    }
    if !costs.iter().all(|&c| c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("costs must be positive"));
    }
    if !scores.iter().all(|&s| s >= 0.0 && s.is_finite()) {
        return Err(Error::invalid("scores must be non-negative"));
    }
    Ok((normalize_max(scores), normalize_max(costs)))
}

/// `x / max(x)`; all-zero input stays zero.
pub fn normalize_max(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(0.0_f64, f64::max);
    if m == 0.0 {
        vec![0.0; xs.len()]
    } else {
        xs.iter().map(|&x| x / m).collect()
    }
}

/// Partitions prompts into train and test sides; every score and comparison
/// follows its prompt.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(
            "train fraction must lie strictly between 0 and 1",
        ));
    }
    let n = dataset.prompts.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let train_ids: HashSet<&str> = order[..n_train]
        .iter()
        .map(|&i| dataset.prompts[i].prompt_id.as_str())
        .collect();
    let test_ids: HashSet<&str> = order[n_train..]
        .iter()
        .map(|&i| dataset.prompts[i].prompt_id.as_str())
        .collect();
    Ok((
        dataset.restrict_prompts(&train_ids),
        dataset.restrict_prompts(&test_ids),
    ))
}

/// Model costs for commercial and hosted open models, per 1M input + 1M output tokens.
pub fn bundled_models() -> Vec<ModelRecord> {
    include_str!("../../data/models.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled table is valid"))
        .collect()
}

/// Cost of a bundled model by id.
pub fn bundled_cost(model_id: &str) -> Option<f64> {
    bundled_models()
        .into_iter()
        .find(|m| m.model_id == model_id)
        .map(|m| m.cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_three_values() {
        let (eta, bin) = binarize_scores(&[0.2, 0.9, 0.7]).unwrap();
        assert!((eta - 0.45).abs() < 1e-12);
        assert_eq!(bin, vec![0, 1, 1]);
        let mean = (0.2 + 0.9 + 0.7) / 3.0;
        let y = [0.2, 0.9, 0.7];
        assert!((binarization_objective(&y, mean, 0.45) - 0.00444).abs() < 1e-5);
        assert!((binarization_objective(&y, mean, 0.8) - 0.0711).abs() < 1e-4);
        assert!((binarization_objective(&y, mean, 0.0) - 0.16).abs() < 1e-12);
        assert!((binarization_objective(&y, mean, 1.0) - 0.36).abs() < 1e-12);
    }

    #[test]
    fn binarize_binary_is_identity() {
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let (eta, bin) = binarize_scores(&y).unwrap();
        let mean_b = bin.iter().map(|&b| b as f64).sum::<f64>() / 5.0;
        assert_eq!(mean_b, 0.6);
        assert_eq!(bin, vec![0, 1, 1, 0, 1]);
        assert_eq!(eta, 0.0);
    }

    #[test]
    fn binarize_constant_picks_smallest() {
        let (eta, bin) = binarize_scores(&[0.7, 0.7, 0.7]).unwrap();
        assert_eq!(eta, 0.0);
        assert_eq!(bin, vec![1, 1, 1]);
    }

    #[test]
    fn binarize_rejects_empty() {
        assert!(binarize_scores(&[]).is_err());
    }

    #[test]
    fn normalize_table_costs() {
        let (s, c) = normalize_set(&[0.8, 0.4], &[90.0, 1.08]).unwrap();
        assert_eq!(s, vec![1.0, 0.5]);
        assert_eq!(c[0], 1.0);
        assert!((c[1] - 0.012).abs() < 1e-15);
        let (_, c) = normalize_set(&[0.1, 0.2], &[3.0, 3.0]).unwrap();
        assert_eq!(c, vec![1.0, 1.0]);
        let (s, _) = normalize_set(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
        assert!(normalize_set(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn bundled_table_has_reference_costs() {
        assert_eq!(bundled_cost("gpt-4"), Some(90.0));
        assert_eq!(bundled_cost("mixtral-8x7b"), Some(1.08));
        assert_eq!(bundled_models().len(), 39);
    }

    fn toy(n: usize) -> Dataset {
        Dataset {
            prompts: (0..n)
                .map(|i| PromptRecord {
                    prompt_id: format!("p{i}"),
                    embedding: vec![i as f64],
                })
                .collect(),
            models: vec![ModelRecord {
                model_id: "m".into(),
                cost: 1.0,
            }],
            scores: (0..n)
                .map(|i| EvaluationScore {
                    model_id: "m".into(),
                    prompt_id: format!("p{i}"),
                    raw_score: (i % 2) as f64,
                    binary_score: (i % 2) as u8,
                })
                .collect(),
            pairwise: vec![],
            threshold: None,
        }
    }

    #[test]
    fn split_partitions_prompts() {
        let d = toy(100);
        let (tr, te) = split(&d, 0.8, 11).unwrap();
        assert_eq!(tr.prompts.len(), 80);
        assert_eq!(te.prompts.len(), 20);
        let a: HashSet<_> = tr.prompts.iter().map(|p| &p.prompt_id).collect();
        let b: HashSet<_> = te.prompts.iter().map(|p| &p.prompt_id).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 100);
        assert_eq!(tr.scores.len() + te.scores.len(), 100);
        let (tr2, _) = split(&d, 0.8, 11).unwrap();
        assert_eq!(tr, tr2);
        assert!(split(&d, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn binarization_is_grid_optimal(ys in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
            let (eta, _) = binarize_scores(&ys).unwrap();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let best = binarization_objective(&ys, mean, eta);
            for c in threshold_candidates(&ys) {
                prop_assert!(best <= binarization_objective(&ys, mean, c));
            }
        }

        #[test]
        fn normalization_is_idempotent(
            pairs in proptest::collection::vec((0.0f64..1.0, 0.01f64..100.0), 2..8)
        ) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let c: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (s1, c1) = normalize_set(&s, &c).unwrap();
            let (s2, c2) = normalize_set(&s1, &c1).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(c1, c2);
        }
    }
}
