//! Platt scaling of score-head logit differences against observed winners.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{embedding_matrix, IrtModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnkernel::sigmoid;
use crate::real17;

/// L2 penalty on `(alpha, beta)`; keeps separable data from diverging.
pub const PLATT_L2: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    #[serde(with = "real17::scalar")]
    pub alpha: f64,
    #[serde(with = "real17::scalar")]
    pub beta: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            alpha: 1.0,
            beta: 0.0,
        }
    }
}

impl CalibrationParams {
    /// Calibrated probability `sigmoid(alpha * logit + beta)`.
    pub fn apply(&self, logit: f64) -> f64 {
        sigmoid(self.alpha * logit + self.beta)
    }
}

fn objective(x: &[f64], y: &[f64], a: f64, b: f64, l2: f64) -> f64 {
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let z = a * xi + b;
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - yi * z
        })
        .sum();
    nll + 0.5 * l2 * (a * a + b * b)
}

/// Maximizes the L2-penalized log-likelihood of `labels` under
/// `sigmoid(alpha * x + beta)` with damped Newton steps.
pub fn fit_platt(x: &[f64], labels: &[f64], l2: f64) -> Result<CalibrationParams> {
    if x.is_empty() {
        return Err(Error::invalid("calibration needs at least one comparison"));
    }
    if x.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "calibration labels",
            expected: x.len(),
            got: labels.len(),
        });
    }
    if !x.iter().chain(labels).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("calibration input"));
    }
    let (mut a, mut b) = (0.0, 0.0);
    let mut f = objective(x, labels, a, b, l2);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (l2 * a, l2 * b, l2, 0.0, l2);
        for (&xi, &yi) in x.iter().zip(labels) {
            let p = sigmoid(a * xi + b);
            let r = p - yi;
            let w = p * (1.0 - p);
            ga += r * xi;
            gb += r;
            haa += w * xi * xi;
            hab += w * xi;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if det.is_nan() || det <= 0.0 {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-10 {
            let (na, nb) = (a - t * da, b - t * db);
            let nf = objective(x, labels, na, nb, l2);
            if nf <= f {
                let done = (na - a).abs() < 1e-12 && (nb - b).abs() < 1e-12;
                a = na;
                b = nb;
                f = nf;
                improved = !done;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Divergence("calibration parameters".into()));
    }
    Ok(CalibrationParams { alpha: a, beta: b })
}

/// Fits calibration on the score-head logit difference of each comparison's
/// two models, at posterior-mean identities.
pub fn platt_calibrate(model: &IrtModel, dataset: &Dataset) -> Result<CalibrationParams> {
    if dataset.pairwise.is_empty() {
        return Err(Error::invalid("calibration needs pairwise comparisons"));
    }
    let emb = embedding_matrix(dataset);
    let logits = score_logit_table(model, emb.view(), dataset)?;
    let pi = dataset.prompt_index();
    let mut diffs = Vec::with_capacity(dataset.pairwise.len());
    let mut labels = Vec::with_capacity(dataset.pairwise.len());
    for c in &dataset.pairwise {
        let n = *pi
            .get(c.prompt_id.as_str())
            .ok_or_else(|| Error::invalid(format!("unknown prompt {}", c.prompt_id)))?;
        let a = model
            .identity_index(&c.model_a)
            .ok_or_else(|| Error::invalid(format!("no identity for model {}", c.model_a)))?;
        let b = model
            .identity_index(&c.model_b)
            .ok_or_else(|| Error::invalid(format!("no identity for model {}", c.model_b)))?;
        diffs.push(logits[a][n] - logits[b][n]);
        labels.push(c.winner as f64);
    }
    fit_platt(&diffs, &labels, PLATT_L2)
}

/// `table[identity][prompt]` of score logits for every known identity.
fn score_logit_table(
    model: &IrtModel,
    emb: ArrayView2<f64>,
    dataset: &Dataset,
) -> Result<Vec<Vec<f64>>> {
    let used: std::collections::HashSet<&str> = dataset
        .pairwise
        .iter()
        .flat_map(|c| [c.model_a.as_str(), c.model_b.as_str()])
        .collect();
    model
        .identities
        .iter()
        .map(|id| {
            if used.contains(id.model_id.as_str()) {
                model.score_logits(emb, &id.mean)
            } else {
                Ok(Vec::new())
            }
        })
        .collect()
}
