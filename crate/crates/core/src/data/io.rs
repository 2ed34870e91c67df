//! Line-delimited JSON ingestion with per-line validation.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    binarize_scores, Dataset, EvaluationScore, ModelRecord, PairwiseComparison, PromptRecord,
};
use crate::error::{Error, Result};

/// Locations of the four input files.
#[derive(Clone, Debug)]
pub struct DataPaths {
    pub prompts: PathBuf,
    pub models: PathBuf,
    pub scores: PathBuf,
    pub pairwise: PathBuf,
}

impl DataPaths {
    /// `prompts.jsonl`, `models.jsonl`, `scores.jsonl`, `pairwise.jsonl` under `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        DataPaths {
            prompts: d.join("prompts.jsonl"),
            models: d.join("models.jsonl"),
            scores: d.join("scores.jsonl"),
            pairwise: d.join("pairwise.jsonl"),
        }
    }
}

/// Records dropped (not rejected) during ingestion.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_ties: usize,
    pub dropped_multi_turn_prompts: usize,
    pub dropped_records_for_excluded_prompts: usize,
}

#[derive(Deserialize)]
struct PromptLine {
    prompt_id: String,
    embedding: Vec<f64>,
    #[serde(default)]
    turns: Option<u32>,
}

#[derive(Serialize)]
struct PromptOut<'a> {
    prompt_id: &'a str,
    embedding: &'a [f64],
}

#[derive(Deserialize, Serialize)]
struct ScoreLine {
    model_id: String,
    prompt_id: String,
    score: f64,
}

#[derive(Deserialize)]
struct PairLine {
    prompt_id: String,
    model_a: String,
    model_b: String,
    winner: serde_json::Value,
}

fn verr(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Validation {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Yields `(1-based line number, text)` for every non-blank line.
pub fn read_jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| verr(path, line, e.to_string()))
}

/// Loads prompts; multi-turn prompts (`"turns" > 1`) are excluded.
/// Returns the kept prompts and the ids of excluded ones.
pub fn load_prompts(path: &Path) -> Result<(Vec<PromptRecord>, HashSet<String>)> {
    let mut prompts = Vec::new();
    let mut excluded = HashSet::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (line, text) in read_jsonl_lines(path)? {
        let p: PromptLine = parse(path, line, &text)?;
        if p.prompt_id.is_empty() {
            return Err(verr(path, line, "prompt_id must be non-empty"));
        }
        if !seen.insert(p.prompt_id.clone()) {
            return Err(verr(
                path,
                line,
                format!("duplicate prompt_id {}", p.prompt_id),
            ));
        }
        if p.turns.is_some_and(|t| t > 1) {
            excluded.insert(p.prompt_id);
            continue;
        }
        if p.embedding.is_empty() {
            return Err(verr(path, line, "embedding must be non-empty"));
        }
        if !p.embedding.iter().all(|v| v.is_finite()) {
            return Err(verr(path, line, "embedding has non-finite entries"));
        }
        match dim {
            None => dim = Some(p.embedding.len()),
            Some(d) if d != p.embedding.len() => {
                return Err(verr(
                    path,
                    line,
                    format!(
                        "embedding has dimension {}, expected {d}",
                        p.embedding.len()
                    ),
                ))
            }
            _ => {}
        }
        prompts.push(PromptRecord {
            prompt_id: p.prompt_id,
            embedding: p.embedding,
        });
    }
    Ok((prompts, excluded))
}

pub fn load_models(path: &Path) -> Result<Vec<ModelRecord>> {
    let mut models = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in read_jsonl_lines(path)? {
        let m: ModelRecord = parse(path, line, &text)?;
        if m.model_id.is_empty() {
            return Err(verr(path, line, "model_id must be non-empty"));
        }
        if !(m.cost > 0.0 && m.cost.is_finite()) {
            return Err(verr(
                path,
                line,
                format!("field cost must be positive, got {}", m.cost),
            ));
        }
        if !seen.insert(m.model_id.clone()) {
            return Err(verr(
                path,
                line,
                format!("duplicate model_id {}", m.model_id),
            ));
        }
        models.push(m);
    }
    Ok(models)
}

/// Raw `(model, prompt, score)` triples with range and reference checks.
fn load_raw_scores(
    path: &Path,
    prompts: &HashSet<&str>,
    excluded: &HashSet<String>,
    models: &HashSet<&str>,
    report: &mut LoadReport,
) -> Result<Vec<ScoreLine>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in read_jsonl_lines(path)? {
        let s: ScoreLine = parse(path, line, &text)?;
        if !(0.0..=1.0).contains(&s.score) {
            return Err(verr(
                path,
                line,
                format!("field score must lie in [0, 1], got {}", s.score),
            ));
        }
        if !models.contains(s.model_id.as_str()) {
            return Err(verr(path, line, format!("unknown model_id {}", s.model_id)));
        }
        if excluded.contains(&s.prompt_id) {
            report.dropped_records_for_excluded_prompts += 1;
            continue;
        }
        if !prompts.contains(s.prompt_id.as_str()) {
            return Err(verr(
                path,
                line,
                format!("unknown prompt_id {}", s.prompt_id),
            ));
        }
        if !seen.insert((s.model_id.clone(), s.prompt_id.clone())) {
            return Err(verr(
                path,
                line,
                format!("duplicate score for ({}, {})", s.model_id, s.prompt_id),
            ));
        }
        out.push(s);
    }
    Ok(out)
}

/// Loads comparisons; ties (winner not 0/1, e.g. `null` or `0.5`) are dropped.
pub fn load_pairwise(
    path: &Path,
    prompts: &HashSet<&str>,
    excluded: &HashSet<String>,
    models: &HashSet<&str>,
    report: &mut LoadReport,
) -> Result<Vec<PairwiseComparison>> {
    let mut out = Vec::new();
    for (line, text) in read_jsonl_lines(path)? {
        let p: PairLine = parse(path, line, &text)?;
        let winner = match &p.winner {
            serde_json::Value::Number(n) if n.as_u64() == Some(0) => 0,
            serde_json::Value::Number(n) if n.as_u64() == Some(1) => 1,
            serde_json::Value::Null => {
                report.dropped_ties += 1;
                continue;
            }
            serde_json::Value::Number(n) if n.as_f64() == Some(0.5) => {
                report.dropped_ties += 1;
                continue;
            }
            serde_json::Value::String(s) if s == "tie" => {
                report.dropped_ties += 1;
                continue;
            }
            other => {
                return Err(verr(
                    path,
                    line,
                    format!("field winner must be 0 or 1, got {other}"),
                ))
            }
        };
        for m in [&p.model_a, &p.model_b] {
            if !models.contains(m.as_str()) {
                return Err(verr(path, line, format!("unknown model_id {m}")));
            }
        }
        if p.model_a == p.model_b {
            return Err(verr(path, line, "model_a and model_b must differ"));
        }
        if excluded.contains(&p.prompt_id) {
            report.dropped_records_for_excluded_prompts += 1;
            continue;
        }
        if !prompts.contains(p.prompt_id.as_str()) {
            return Err(verr(
                path,
                line,
                format!("unknown prompt_id {}", p.prompt_id),
            ));
        }
        out.push(PairwiseComparison {
            prompt_id: p.prompt_id,
            model_a: p.model_a,
            model_b: p.model_b,
            winner,
        });
    }
    Ok(out)
}

/// Loads and cross-validates all four files. A missing pairwise file is
/// treated as empty. Raw scores are binarized as one group.
pub fn load_dataset(paths: &DataPaths) -> Result<(Dataset, LoadReport)> {
    let mut report = LoadReport::default();
    let (prompts, excluded) = load_prompts(&paths.prompts)?;
    report.dropped_multi_turn_prompts = excluded.len();
    let models = load_models(&paths.models)?;
    let prompt_ids: HashSet<&str> = prompts.iter().map(|p| p.prompt_id.as_str()).collect();
    let model_ids: HashSet<&str> = models.iter().map(|m| m.model_id.as_str()).collect();

    let raw = load_raw_scores(
        &paths.scores,
        &prompt_ids,
        &excluded,
        &model_ids,
        &mut report,
    )?;
    let (threshold, binary) = if raw.is_empty() {
        (None, Vec::new())
    } else {
        let ys: Vec<f64> = raw.iter().map(|s| s.score).collect();
        let (t, b) = binarize_scores(&ys)?;
        (Some(t), b)
    };
    let scores = raw
        .into_iter()
        .zip(binary)
        .map(|(s, b)| EvaluationScore {
            model_id: s.model_id,
            prompt_id: s.prompt_id,
            raw_score: s.score,
            binary_score: b,
        })
        .collect();

    let pairwise = if paths.pairwise.exists() {
        load_pairwise(
            &paths.pairwise,
            &prompt_ids,
            &excluded,
            &model_ids,
            &mut report,
        )?
    } else {
        Vec::new()
    };

    Ok((
        Dataset {
            prompts,
            models,
            scores,
            pairwise,
            threshold,
        },
        report,
    ))
}

/// Canonical JSONL text of each collection: prompts, models, scores, pairwise.
pub(crate) fn render_jsonl(d: &Dataset) -> [String; 4] {
    let mut prompts = String::new();
    for p in &d.prompts {
        prompts.push_str(
            &serde_json::to_string(&PromptOut {
                prompt_id: &p.prompt_id,
                embedding: &p.embedding,
            })
            .expect("serializable"),
        );
        prompts.push('\n');
    }
    let mut models = String::new();
    for m in &d.models {
        models.push_str(&serde_json::to_string(m).expect("serializable"));
        models.push('\n');
    }
    let mut scores = String::new();
    for s in &d.scores {
        scores.push_str(
            &serde_json::to_string(&ScoreLine {
                model_id: s.model_id.clone(),
                prompt_id: s.prompt_id.clone(),
                score: s.raw_score,
            })
            .expect("serializable"),
        );
        scores.push('\n');
    }
    let mut pairwise = String::new();
    for c in &d.pairwise {
        pairwise.push_str(&serde_json::to_string(c).expect("serializable"));
        pairwise.push('\n');
    }
    [prompts, models, scores, pairwise]
}

/// Writes the four JSONL files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<DataPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DataPaths::in_dir(dir);
    let [p, m, s, c] = render_jsonl(d);
    for (path, text) in [
        (&paths.prompts, p),
        (&paths.models, m),
        (&paths.scores, s),
        (&paths.pairwise, c),
    ] {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(paths)
}
