//! Command-line front end. Every command is deterministic under its seed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coldstart::{
    infer_identity, stratified_select, InferenceConfig, PromptBudgetPlan, DEFAULT_STRATA,
};
use crate::data::{
    bundled_cost, gen_synthetic, load_dataset, load_models, read_jsonl_lines, split, write_dataset,
    DataPaths, Dataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::harness::{
    baseline_random, comparisons_in, eval_policy, parse_grid, EvalMode, EvalReport, OracleRouter,
    PolicyRouter, PredictorRouter,
};
use crate::irt::{
    discrimination_scores, embedding_matrix, platt_calibrate, train_irt, CalibrationParams,
    IdentityVector, IrtCheckpoint, IrtConfig, IrtModel,
};
use crate::policy::{
    pretrain_policy, train_policy, PolicyCheckpoint, PolicyConfig, PoolModel, PpoConfig,
    Preference, PretrainConfig, RoutingTable,
};
use crate::real17;

#[derive(Parser, Debug)]
#[command(
    name = "prefroute",
    version,
    about = "Preference-conditioned model routing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic leaderboard with planted abilities.
    GenSynth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split a dataset's prompts into train and test directories.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the item-response model.
    TrainIrt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit Platt scaling of pairwise logit differences.
    Calibrate {
        #[arg(long)]
        irt: PathBuf,
        /// Comparisons file; prompts and models are read from its directory.
        #[arg(long)]
        pairwise: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised warm start of a fresh policy.
    Pretrain {
        #[arg(long)]
        irt: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        pairwise: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Multi-objective PPO on top of a policy checkpoint.
    Train {
        #[arg(long)]
        irt: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Infer a new model's identity from a small stratified evaluation.
    Coldstart {
        #[arg(long)]
        irt: PathBuf,
        /// Scores of the new model; only prompts in the selection are used.
        #[arg(long)]
        scores: PathBuf,
        /// Dataset of the existing pool used to rank prompts; defaults to the
        /// directory of the scores file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        budget: usize,
        #[arg(long, default_value_t = DEFAULT_STRATA)]
        strata: usize,
        /// Which model of the scores file to characterize.
        #[arg(long)]
        model_id: Option<String>,
        /// Cost of the new model, used when it is routed later.
        #[arg(long)]
        cost: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a policy and baselines over a preference grid.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        irt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long, default_value = "0:2:21")]
        omega_grid: String,
        #[arg(long, value_delimiter = ',', default_value = "oracle,predictor,random")]
        baselines: Vec<String>,
        /// Draw actions instead of averaging full distributions.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the routing distribution for one prompt embedding.
    Route {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        irt: PathBuf,
        /// JSON array, or an object with an `embedding` field.
        #[arg(long)]
        embedding: PathBuf,
        #[command(flatten)]
        pool: PoolArgs,
        /// Costs file; models missing from it fall back to the bundled table.
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long)]
        omega: f64,
    },
}

#[derive(Args, Debug, Clone)]
pub struct PoolArgs {
    /// Comma-separated model ids; defaults to every model with an identity.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Extra identity files from `coldstart`, added to the IRT identities.
    #[arg(long = "identity")]
    pub identities: Vec<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PretrainFile {
    policy: PolicyConfig,
    pretrain: PretrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ColdstartOutput {
    pub identity: IdentityVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    pub n_observations: usize,
    pub from_prior: bool,
    #[serde(with = "real17::scalar")]
    pub final_loss: f64,
    pub plan: PromptBudgetPlan,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Validation {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn load_dir(dir: &Path) -> Result<Dataset> {
    let (d, report) = load_dataset(&DataPaths::in_dir(dir))?;
    d.validate()?;
    if report.dropped_ties
        + report.dropped_multi_turn_prompts
        + report.dropped_records_for_excluded_prompts
        > 0
    {
        eprintln!(
            "dropped {} ties, {} multi-turn prompts, {} records of excluded prompts",
            report.dropped_ties,
            report.dropped_multi_turn_prompts,
            report.dropped_records_for_excluded_prompts
        );
    }
    Ok(d)
}

/// Dataset around a comparisons file: the other three files are taken from
/// the same directory.
fn load_around(pairwise: &Path) -> Result<Dataset> {
    let dir = pairwise.parent().unwrap_or(Path::new("."));
    let mut paths = DataPaths::in_dir(dir);
    paths.pairwise = pairwise.to_path_buf();
    let (d, _) = load_dataset(&paths)?;
    d.validate()?;
    Ok(d)
}

fn load_irt(path: &Path) -> Result<(IrtModel, Option<CalibrationParams>)> {
    let ck: IrtCheckpoint = read_json(path)?;
    Ok((IrtModel::from_checkpoint(&ck)?, ck.calibration))
}

fn load_policy(
    path: &Path,
) -> Result<(
    PolicyCheckpoint,
    crate::policy::RoutingPolicy,
    crate::policy::ValueNet,
)> {
    let ck: PolicyCheckpoint = read_json(path)?;
    let (p, v) = ck.restore()?;
    Ok((ck, p, v))
}

/// Routable models after adding cold-start identities to `irt`: the pool
/// ids and the costs carried by the identity files.
struct Resolved {
    ids: Vec<String>,
    costs: Vec<(String, f64)>,
}

impl Resolved {
    fn pool(&self, irt: &IrtModel, d: &Dataset) -> Result<Vec<PoolModel>> {
        self.ids
            .iter()
            .map(|id| {
                let identity = irt
                    .identity(id)
                    .ok_or_else(|| Error::invalid(format!("no identity for model {id}")))?;
                let cost = self
                    .costs
                    .iter()
                    .find(|(m, _)| m == id)
                    .map(|(_, c)| *c)
                    .or_else(|| d.model(id).map(|m| m.cost))
                    .ok_or_else(|| Error::invalid(format!("no cost for model {id}")))?;
                Ok(PoolModel {
                    model_id: id.clone(),
                    identity: identity.mean.clone(),
                    cost,
                })
            })
            .collect()
    }
}

/// Adds cold-start identities to `irt` and resolves the pool ids.
fn resolve_pool(irt: &mut IrtModel, pool: &PoolArgs) -> Result<Resolved> {
    let mut costs = Vec::new();
    for path in &pool.identities {
        let out: ColdstartOutput = read_json(path)?;
        crate::error::check_dim("identity", irt.identity_dim(), out.identity.dim())?;
        if irt.identity(&out.identity.model_id).is_some() {
            return Err(Error::invalid(format!(
                "model {} already has an identity",
                out.identity.model_id
            )));
        }
        if let Some(c) = out.cost {
            costs.push((out.identity.model_id.clone(), c));
        }
        irt.identities.push(out.identity);
    }
    let ids = if pool.models.is_empty() {
        irt.identities.iter().map(|i| i.model_id.clone()).collect()
    } else {
        pool.models.clone()
    };
    if ids.len() < 2 {
        return Err(Error::invalid("routing needs at least two models"));
    }
    Ok(Resolved { ids, costs })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { spec, out, seed } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let g = gen_synthetic(&spec)?;
            write_dataset(&out, &g.dataset)?;
            write(&out.join("truth.json"), &to_json(&g.truth)?)?;
            eprintln!(
                "wrote {} prompts, {} models to {}",
                g.dataset.prompts.len(),
                g.dataset.models.len(),
                out.display()
            );
        }
        Command::Split {
            data,
            train_out,
            test_out,
            fraction,
            seed,
        } => {
            let d = load_dir(&data)?;
            let (train, test) = split(&d, fraction, seed)?;
            write_dataset(&train_out, &train)?;
            write_dataset(&test_out, &test)?;
        }
        Command::TrainIrt {
            data,
            out,
            config,
            seed,
        } => {
            let d = load_dir(&data)?;
            let mut cfg: IrtConfig = match config {
                Some(p) => read_json(&p)?,
                None => IrtConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (model, report) = train_irt(&d, &cfg)?;
            write(&out, &model.to_checkpoint(None).to_json()?)?;
            eprintln!(
                "irt loss {:.5} -> {:.5}",
                report.initial_loss, report.final_loss
            );
        }
        Command::Calibrate { irt, pairwise, out } => {
            let (model, _) = load_irt(&irt)?;
            let d = load_around(&pairwise)?;
            let calib = platt_calibrate(&model, &d)?;
            write(&out, &to_json(&calib)?)?;
        }
        Command::Pretrain {
            irt,
            calib,
            pairwise,
            out,
            pool,
            config,
            seed,
        } => {
            let (mut model, _) = load_irt(&irt)?;
            let calib: CalibrationParams = read_json(&calib)?;
            let d = load_around(&pairwise)?;
            let pool = resolve_pool(&mut model, &pool)?;
            let mut cfg: PretrainFile = match config {
                Some(p) => read_json(&p)?,
                None => PretrainFile::default(),
            };
            if let Some(s) = seed {
                cfg.policy.seed = s;
                cfg.pretrain.seed = s;
            }
            let table = RoutingTable::build(&model, &d, pool.pool(&model, &d)?)?;
            let comparisons = comparisons_in(&table, &d);
            let (policy, value, report) =
                pretrain_policy(&table, &comparisons, &calib, &cfg.policy, &cfg.pretrain)?;
            write(
                &out,
                &PolicyCheckpoint::new(&policy, &value, &cfg.policy).to_json()?,
            )?;
            if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
                eprintln!("pretraining loss {first:.5} -> {last:.5}");
            }
        }
        Command::Train {
            irt,
            policy,
            data,
            pool,
            out,
            config,
            seed,
        } => {
            let (mut model, _) = load_irt(&irt)?;
            let (ck, p, v) = load_policy(&policy)?;
            let d = load_dir(&data)?;
            let pool = resolve_pool(&mut model, &pool)?;
            let mut cfg: PpoConfig = match config {
                Some(path) => read_json(&path)?,
                None => PpoConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let table = RoutingTable::build(&model, &d, pool.pool(&model, &d)?)?;
            let (p, v, log) = train_policy(p, v, &table, &cfg)?;
            write(&out, &PolicyCheckpoint::new(&p, &v, &ck.config).to_json()?)?;
            let n = log.step_returns.len();
            if n > 0 {
                let w = n.min(50);
                let head = log.step_returns[..w].iter().sum::<f64>() / w as f64;
                let tail = log.step_returns[n - w..].iter().sum::<f64>() / w as f64;
                eprintln!(
                    "scalarized return {head:.5} -> {tail:.5}; dropped {}",
                    log.dropped
                );
            }
        }
        Command::Coldstart {
            irt,
            scores,
            data,
            budget,
            strata,
            model_id,
            cost,
            out,
            seed,
        } => {
            if cost.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
                return Err(Error::invalid("cost must be positive"));
            }
            let (model, _) = load_irt(&irt)?;
            let dir =
                data.unwrap_or_else(|| scores.parent().unwrap_or(Path::new(".")).to_path_buf());
            let pool_data = load_dir(&dir)?;
            let known: Vec<&str> = pool_data
                .models
                .iter()
                .map(|m| m.model_id.as_str())
                .filter(|id| model.identity(id).is_some())
                .collect();
            let keep = known.iter().copied().collect();
            let disc = discrimination_scores(&model, &pool_data.restrict_models(&keep))?;
            let plan = stratified_select(&disc.prompt_ids, &disc.psi, budget, strata, seed)?;
            let (id, emb, labels) = new_model_observations(&scores, &pool_data, &plan, model_id)?;
            let cfg = InferenceConfig {
                seed,
                ..InferenceConfig::default()
            };
            let inferred = infer_identity(&model, &id, emb.view(), &labels, &cfg)?;
            if inferred.from_prior {
                eprintln!("no scores on the selected prompts; returning the prior");
            }
            let output = ColdstartOutput {
                cost: cost.or_else(|| bundled_cost(&id)),
                identity: inferred.identity,
                n_observations: inferred.n_observations,
                from_prior: inferred.from_prior,
                final_loss: inferred.final_loss,
                plan,
            };
            write(&out, &to_json(&output)?)?;
        }
        Command::Eval {
            policy,
            irt,
            data,
            pool,
            omega_grid,
            baselines,
            samples,
            out,
            seed,
        } => {
            let (mut model, _) = load_irt(&irt)?;
            let (ck, p, _) = load_policy(&policy)?;
            let d = load_dir(&data)?;
            let pool = resolve_pool(&mut model, &pool)?;
            let grid = parse_grid(&omega_grid)?;
            let mode = match samples {
                Some(n) if n > 0 => EvalMode::Sampled {
                    samples_per_prompt: n,
                    seed,
                },
                Some(_) => return Err(Error::invalid("samples must be positive")),
                None => EvalMode::Exact,
            };
            let table = RoutingTable::build(&model, &d, pool.pool(&model, &d)?)?;
            let set: Vec<usize> = (0..pool.ids.len()).collect();
            let router = PolicyRouter {
                label: "policy".into(),
                policy: &p,
                use_predicted_scores: true,
            };
            let mut points = eval_policy(&router, &table, &set, &grid, mode)?;
            for b in &baselines {
                match b.as_str() {
                    "oracle" => {
                        points.extend(eval_policy(&OracleRouter, &table, &set, &grid, mode)?)
                    }
                    "predictor" => {
                        points.extend(eval_policy(&PredictorRouter, &table, &set, &grid, mode)?)
                    }
                    "random" if set.len() != 2 => {
                        eprintln!("the random baseline needs exactly two models; skipped");
                    }
                    "random" => {
                        let n = grid.len().max(2);
                        let qs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
                        points.extend(baseline_random(&table, &set, &qs)?);
                    }
                    "" => {}
                    other => return Err(Error::invalid(format!("unknown baseline {other}"))),
                }
            }
            let skipped = points.first().map_or(0, |p| p.skipped);
            if skipped > 0 {
                eprintln!("skipped {skipped} prompts with missing scores");
            }
            let config = format!(
                "{}|{}|{omega_grid}|{baselines:?}|{samples:?}",
                ck.sha256()?,
                pool.ids.join(",")
            );
            write(&out, &EvalReport::new(points, seed, &config).to_csv())?;
        }
        Command::Route {
            policy,
            irt,
            embedding,
            pool,
            costs,
            omega,
        } => {
            let (mut model, _) = load_irt(&irt)?;
            let (_, p, _) = load_policy(&policy)?;
            let pool = resolve_pool(&mut model, &pool)?;
            let e = read_embedding(&embedding)?;
            let table_costs = match &costs {
                Some(path) => load_models(path)?,
                None => Vec::new(),
            };
            let mut reg = crate::coldstart::Registry::new();
            for id in &pool.ids {
                let identity = model
                    .identity(id)
                    .ok_or_else(|| Error::invalid(format!("no identity for model {id}")))?;
                let cost = pool
                    .costs
                    .iter()
                    .find(|(m, _)| m == id)
                    .map(|(_, c)| *c)
                    .or_else(|| {
                        table_costs
                            .iter()
                            .find(|m| &m.model_id == id)
                            .map(|m| m.cost)
                    })
                    .or_else(|| bundled_cost(id))
                    .ok_or_else(|| Error::invalid(format!("no cost known for model {id}")))?;
                reg.register(id.clone(), cost, identity.mean.clone())?;
            }
            let refs: Vec<&str> = pool.ids.iter().map(String::as_str).collect();
            let ctx = reg.context(&model, &e, &refs, true)?;
            let (probs, logits) = p.route(&e, &ctx, Preference::new(omega)?)?;
            let best = probs
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > probs[b] { i } else { b });
            let out = RouteOutput {
                omega_cost: omega,
                choice: pool.ids[best].clone(),
                models: pool.ids,
                probabilities: probs,
                logits,
            };
            print!("{}", to_json(&out)?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RouteOutput {
    #[serde(with = "real17::scalar")]
    omega_cost: f64,
    models: Vec<String>,
    #[serde(with = "real17::vec")]
    probabilities: Vec<f64>,
    #[serde(with = "real17::vec")]
    logits: Vec<f64>,
    choice: String,
}

fn read_embedding(path: &Path) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Emb {
        Plain(Vec<f64>),
        Record { embedding: Vec<f64> },
    }
    Ok(match read_json::<Emb>(path)? {
        Emb::Plain(v) | Emb::Record { embedding: v } => v,
    })
}

#[derive(Deserialize)]
struct NewScore {
    model_id: String,
    prompt_id: String,
    score: f64,
}

/// Binarized scores of the single new model on the planned prompts.
fn new_model_observations(
    path: &Path,
    pool_data: &Dataset,
    plan: &PromptBudgetPlan,
    model_id: Option<String>,
) -> Result<(String, ndarray::Array2<f64>, Vec<f64>)> {
    let mut rows = Vec::new();
    for (line, text) in read_jsonl_lines(path)? {
        let s: NewScore = serde_json::from_str(&text).map_err(|e| Error::Validation {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&s.score) {
            return Err(Error::Validation {
                path: path.to_path_buf(),
                line,
                message: format!("score {} outside [0, 1]", s.score),
            });
        }
        rows.push(s);
    }
    let id = match model_id {
        Some(id) => id,
        None => {
            let mut ids: Vec<&str> = rows.iter().map(|r| r.model_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            match ids.as_slice() {
                [one] => one.to_string(),
                _ => {
                    return Err(Error::invalid(
                        "scores file must hold exactly one model, or pass --model-id",
                    ))
                }
            }
        }
    };
    let threshold = pool_data.threshold.unwrap_or(0.5);
    let selected: std::collections::HashSet<&str> =
        plan.prompt_ids.iter().map(String::as_str).collect();
    let pi = pool_data.prompt_index();
    let emb = embedding_matrix(pool_data);
    let mut keep = Vec::new();
    let mut labels = Vec::new();
    for r in rows
        .iter()
        .filter(|r| r.model_id == id && selected.contains(r.prompt_id.as_str()))
    {
        if keep.contains(&pi[r.prompt_id.as_str()]) {
            return Err(Error::invalid(format!(
                "duplicate score for prompt {}",
                r.prompt_id
            )));
        }
        keep.push(pi[r.prompt_id.as_str()]);
        labels.push(f64::from(u8::from(r.score > threshold)));
    }
    Ok((id, emb.select(ndarray::Axis(0), &keep), labels))
}
