//! Baselines, frontier evaluation and report output.

mod pipeline;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::normalize_max;
use crate::error::{Error, Result};
use crate::metrics::std_error;
use crate::policy::{preferred_action, Preference, RoutingPolicy, RoutingTable};
use crate::real17::format_real;

pub use pipeline::{
    comparisons_in, pretrain_from_split, train_full_stack, PipelineConfig, TrainedStack,
};

/// Anything that maps a prompt, candidate set and preference to a
/// distribution over the candidates.
pub trait Router: Sync {
    fn label(&self) -> String;

    fn distribution(
        &self,
        table: &RoutingTable,
        prompt: usize,
        set: &[usize],
        pref: Preference,
    ) -> Result<Vec<f64>>;
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn ids<'a>(table: &'a RoutingTable, set: &[usize]) -> Vec<&'a str> {
    set.iter()
        .map(|&k| table.pool[k].model_id.as_str())
        .collect()
}

/// The trained preference-conditioned policy.
pub struct PolicyRouter<'a> {
    pub label: String,
    pub policy: &'a RoutingPolicy,
    pub use_predicted_scores: bool,
}

impl Router for PolicyRouter<'_> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn distribution(
        &self,
        table: &RoutingTable,
        prompt: usize,
        set: &[usize],
        pref: Preference,
    ) -> Result<Vec<f64>> {
        let ctx = table.context(prompt, set, self.use_predicted_scores)?;
        let e = table.embeddings.row(prompt).to_vec();
        Ok(self.policy.route(&e, &ctx, pref)?.0)
    }
}

/// Picks the best model per prompt by true normalized score and cost.
pub struct OracleRouter;

impl Router for OracleRouter {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn distribution(
        &self,
        table: &RoutingTable,
        prompt: usize,
        set: &[usize],
        pref: Preference,
    ) -> Result<Vec<f64>> {
        let s = table.normalized_scores(prompt, set).ok_or_else(|| {
            Error::invalid(format!(
                "missing scores for prompt {}",
                table.prompt_ids[prompt]
            ))
        })?;
        let c = normalize_max(&table.raw_costs(set));
        Ok(one_hot(
            preferred_action(&s, &c, &ids(table, set), pref),
            set.len(),
        ))
    }
}

/// Picks the best model per prompt by predicted score and normalized cost.
pub struct PredictorRouter;

impl Router for PredictorRouter {
    fn label(&self) -> String {
        "predictor".into()
    }

    fn distribution(
        &self,
        table: &RoutingTable,
        prompt: usize,
        set: &[usize],
        pref: Preference,
    ) -> Result<Vec<f64>> {
        let p: Vec<f64> = set.iter().map(|&k| table.p_hat(prompt, k)).collect();
        let c = normalize_max(&table.raw_costs(set));
        Ok(one_hot(
            preferred_action(&p, &c, &ids(table, set), pref),
            set.len(),
        ))
    }
}

/// Always routes to the candidate at one set position.
pub struct FixedRouter(pub usize);

impl Router for FixedRouter {
    fn label(&self) -> String {
        format!("fixed-{}", self.0)
    }

    fn distribution(
        &self,
        _: &RoutingTable,
        _: usize,
        set: &[usize],
        _: Preference,
    ) -> Result<Vec<f64>> {
        if self.0 >= set.len() {
            return Err(Error::invalid("fixed position outside the candidate set"));
        }
        Ok(one_hot(self.0, set.len()))
    }
}

/// One separately trained policy per preference value; each is queried only
/// at the preference it was trained for.
pub struct ScalarPpoRouter<'a> {
    pub policies: Vec<(f64, &'a RoutingPolicy)>,
    pub use_predicted_scores: bool,
}

impl Router for ScalarPpoRouter<'_> {
    fn label(&self) -> String {
        "scalar-ppo".into()
    }

    fn distribution(
        &self,
        table: &RoutingTable,
        prompt: usize,
        set: &[usize],
        pref: Preference,
    ) -> Result<Vec<f64>> {
        let (_, policy) = self
            .policies
            .iter()
            .find(|(w, _)| *w == pref.omega_cost)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no scalar policy trained for preference {}",
                    pref.omega_cost
                ))
            })?;
        PolicyRouter {
            label: String::new(),
            policy,
            use_predicted_scores: self.use_predicted_scores,
        }
        .distribution(table, prompt, set, pref)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    /// Averages the full routing distribution per prompt.
    Exact,
    /// Draws actions from the distribution; stream keyed by `(seed, grid index)`.
    Sampled {
        samples_per_prompt: usize,
        seed: u64,
    },
}

/// Expected outcome of one router at one preference over a test split.
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint {
    pub label: String,
    /// Preference weight, or the mixing probability for the random baseline.
    pub omega_cost: f64,
    pub score_raw: f64,
    pub cost_raw: f64,
    pub score_norm: f64,
    pub cost_norm: f64,
    /// Standard errors of the per-prompt raw means.
    pub score_se: f64,
    pub cost_se: f64,
    pub n_prompts: usize,
    /// Prompts dropped because a candidate lacked a score.
    pub skipped: usize,
}

impl ParetoPoint {
    pub fn utility(&self) -> f64 {
        self.score_norm - self.omega_cost * self.cost_norm
    }
}

/// Parses `lo:hi:n` into `n` evenly spaced values.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::invalid(format!("grid `{spec}` is not lo:hi:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    omega_grid(lo, hi, n)
}

pub fn omega_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
        return Err(Error::invalid("grid needs n >= 1 and 0 <= lo <= hi"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect())
}

/// Evaluates `router` on every prompt of `table` over the candidate `set`
/// at each preference of `grid`.
pub fn eval_policy(
    router: &dyn Router,
    table: &RoutingTable,
    set: &[usize],
    grid: &[f64],
    mode: EvalMode,
) -> Result<Vec<ParetoPoint>> {
    if set.len() < 2 || set.iter().any(|&k| k >= table.n_models()) {
        return Err(Error::invalid(
            "candidate set must name at least two pool models",
        ));
    }
    let raw_costs = table.raw_costs(set);
    let norm_costs = normalize_max(&raw_costs);
    let label = router.label();
    grid.par_iter()
        .enumerate()
        .map(|(gi, &w)| {
            let pref = Preference::new(w)?;
            let mut rng = match mode {
                EvalMode::Sampled { seed, .. } => {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream(gi as u64);
                    Some(r)
                }
                EvalMode::Exact => None,
            };
            let (mut sr, mut cr, mut sn, mut cn) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut skipped = 0;
            for n in 0..table.n_prompts() {
                let Some(scores) = table.true_scores(n, set) else {
                    skipped += 1;
                    continue;
                };
                let snorm = normalize_max(&scores);
                let dist = router.distribution(table, n, set, pref)?;
                let weights = match (&mode, rng.as_mut()) {
                    (
                        EvalMode::Sampled {
                            samples_per_prompt, ..
                        },
                        Some(r),
                    ) => {
                        let mut counts = vec![0.0; set.len()];
                        for _ in 0..*samples_per_prompt {
                            let u: f64 = r.random();
                            let mut acc = 0.0;
                            let mut pick = set.len() - 1;
                            for (k, &p) in dist.iter().enumerate() {
                                acc += p;
                                if u < acc {
                                    pick = k;
                                    break;
                                }
                            }
                            counts[pick] += 1.0 / *samples_per_prompt as f64;
                        }
                        counts
                    }
                    _ => dist,
                };
                let dot = |v: &[f64]| weights.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                sr.push(dot(&scores));
                cr.push(dot(&raw_costs));
                sn.push(dot(&snorm));
                cn.push(dot(&norm_costs));
            }
            if sr.is_empty() {
                return Err(Error::invalid(
                    "no test prompt has scores for every candidate",
                ));
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            Ok(ParetoPoint {
                label: label.clone(),
                omega_cost: w,
                score_raw: mean(&sr),
                cost_raw: mean(&cr),
                score_norm: mean(&sn),
                cost_norm: mean(&cn),
                score_se: std_error(&sr),
                cost_se: std_error(&cr),
                n_prompts: sr.len(),
                skipped,
            })
        })
        .collect()
}

/// Mixtures `q * first + (1 - q) * second` of a two-model set, exactly.
pub fn baseline_random(
    table: &RoutingTable,
    set: &[usize],
    qs: &[f64],
) -> Result<Vec<ParetoPoint>> {
    if set.len() != 2 {
        return Err(Error::invalid(
            "the random baseline is defined for exactly two candidates",
        ));
    }
    let ends = eval_policy(&FixedRouter(0), table, set, &[0.0], EvalMode::Exact)?
        .into_iter()
        .chain(eval_policy(
            &FixedRouter(1),
            table,
            set,
            &[0.0],
            EvalMode::Exact,
        )?)
        .collect::<Vec<_>>();
    let (a, b) = (&ends[0], &ends[1]);
    qs.iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::invalid(format!(
                    "mixing probability {q} outside [0, 1]"
                )));
            }
            let mix = |x: f64, y: f64| q * x + (1.0 - q) * y;
            Ok(ParetoPoint {
                label: "random".into(),
                omega_cost: q,
                score_raw: mix(a.score_raw, b.score_raw),
                cost_raw: mix(a.cost_raw, b.cost_raw),
                score_norm: mix(a.score_norm, b.score_norm),
                cost_norm: mix(a.cost_norm, b.cost_norm),
                score_se: 0.0,
                cost_se: 0.0,
                n_prompts: a.n_prompts,
                skipped: a.skipped,
            })
        })
        .collect()
}

/// `a` dominates `b` when it scores at least as high at no greater cost,
/// strictly better in one of the two.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1)
}

/// Indices of the non-dominated `(score, cost)` points; of identical points
/// only the first is kept.
pub fn pareto_filter(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let p = points[i];
            !points
                .iter()
                .enumerate()
                .any(|(j, &q)| dominates(q, p) || (j < i && q == p))
        })
        .collect()
}

/// Area dominated by `points` (score up, cost down) and bounded by
/// `reference = (score, cost)`. Parts beyond the reference contribute nothing.
pub fn hypervolume(points: &[(f64, f64)], reference: (f64, f64)) -> f64 {
    let mut front: Vec<(f64, f64)> = pareto_filter(points)
        .into_iter()
        .map(|i| points[i])
        .collect();
    front.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut area = 0.0;
    for (i, &(s, c)) in front.iter().enumerate() {
        let next = front
            .get(i + 1)
            .map_or(reference.1, |p| p.1.min(reference.1));
        let width = (next - c).max(0.0);
        let height = (s - reference.0).max(0.0);
        area += width * height;
    }
    area
}

/// Hypervolume of raw `(score, cost)` points against `(0, max_cost)`.
pub fn frontier_hypervolume(points: &[ParetoPoint], max_cost: f64) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.score_raw, p.cost_raw)).collect();
    hypervolume(&pts, (0.0, max_cost))
}

pub const CSV_HEADER: &str =
    "policy_label,omega_cost,expected_score_raw,expected_cost_raw,expected_score_norm,expected_cost_norm,n_prompts,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub points: Vec<ParetoPoint>,
    pub seed: u64,
    pub config_hash: String,
}

impl EvalReport {
    pub fn new(points: Vec<ParetoPoint>, seed: u64, config: &str) -> Self {
        EvalReport {
            points,
            seed,
            config_hash: hex::encode(Sha256::digest(config.as_bytes())),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.points {
            if !out.contains(&p.label) {
                out.push(p.label.clone());
            }
        }
        out
    }

    pub fn points_for(&self, label: &str) -> Vec<&ParetoPoint> {
        self.points.iter().filter(|p| p.label == label).collect()
    }

    /// Non-dominated points of one label, by raw score and cost.
    pub fn non_dominated(&self, label: &str) -> Vec<&ParetoPoint> {
        let pts = self.points_for(label);
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.score_raw, p.cost_raw)).collect();
        pareto_filter(&xy).into_iter().map(|i| pts[i]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                p.label,
                format_real(p.omega_cost),
                format_real(p.score_raw),
                format_real(p.cost_raw),
                format_real(p.score_norm),
                format_real(p.cost_norm),
                p.n_prompts,
                self.seed
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dominance_examples() {
        let pts = [(0.9, 0.8), (0.7, 0.9), (0.6, 0.2)];
        assert!(dominates(pts[0], pts[1]));
        assert_eq!(pareto_filter(&pts), vec![0, 2]);
        assert_eq!(pareto_filter(&[(0.5, 0.5)]), vec![0]);
        assert_eq!(pareto_filter(&[(0.5, 0.5), (0.5, 0.5)]), vec![0]);
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume(&[(1.0, 0.0)], (0.0, 1.0)), 1.0);
        assert_eq!(hypervolume(&[], (0.0, 1.0)), 0.0);
        assert_eq!(hypervolume(&[(0.5, 2.0)], (0.0, 1.0)), 0.0);
        assert!(
            (hypervolume(&[(0.5, 0.2), (1.0, 0.6)], (0.0, 1.0)) - (0.4 * 0.5 + 0.4 * 1.0)).abs()
                < 1e-15
        );
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:2:21").unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 2.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert_eq!(parse_grid("0.5:0.5:1").unwrap(), vec![0.5]);
        assert!(parse_grid("0:2").is_err());
    }

    fn grid_hv(points: &[(f64, f64)], reference: (f64, f64), res: f64) -> f64 {
        let n_c = ((reference.1) / res).round() as usize;
        let n_s = (1.0 / res).round() as usize;
        let mut count = 0usize;
        for i in 0..n_c {
            let c = (i as f64 + 0.5) * res;
            for j in 0..n_s {
                let s = (j as f64 + 0.5) * res;
                if points.iter().any(|&(ps, pc)| ps >= s && pc <= c) {
                    count += 1;
                }
            }
        }
        count as f64 * res * res
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn hypervolume_matches_grid_integration(
            pts in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..6)
        ) {
            let exact = hypervolume(&pts, (0.0, 1.0));
            let approx = grid_hv(&pts, (0.0, 1.0), 1e-3);
            prop_assert!((exact - approx).abs() < 1e-2);
        }

        #[test]
        fn filtered_points_are_mutually_non_dominated(
            pts in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..12)
        ) {
            let keep = pareto_filter(&pts);
            prop_assert!(!keep.is_empty());
            for &i in &keep {
                for &j in &keep {
                    prop_assert!(!dominates(pts[i], pts[j]));
                }
            }
            for i in 0..pts.len() {
                if !keep.contains(&i) {
                    prop_assert!(keep.iter().any(|&j| dominates(pts[j], pts[i]) || pts[j] == pts[i]));
                }
            }
        }
    }
}
