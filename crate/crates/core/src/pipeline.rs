//! The three runnable pipelines and the fixtures they share.
//!
//! Each command writes its artifacts into the configured output directory.
//! JSON artifacts wrap their payload as `{"config", "seed", ...}`; CSV and
//! DOT artifacts carry the same information in a leading comment line.
//! Nothing time- or host-dependent is written, so reruns are byte-identical.

use crate::abr::{self, AbrEnv, VideoSpec};
use crate::config::{EvalTarget, RunConfig, RoutingConfig};
use crate::distill::{self, Distilled, Fidelity};
use crate::env::{rollout, Policy, State};
use crate::error::{Error, Result};
use crate::hypergraph::{Hypergraph, Topology};
use crate::mask::{self, Mask, MaskOptions, RankedConnection};
use crate::route::{self, PathChoiceModel};
use crate::seed;
use crate::tree::DecisionTree;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

const FIT_STREAM: u64 = 0xf17;
const MATRIX_STREAM: u64 = 0x3a7;
const EVAL_ROLLOUT_STREAM: u64 = 0xe7a;

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub type RunResult<T> = std::result::Result<T, StageError>;

/// Environments and teacher for the ABR pipelines.
pub struct AbrSetup {
    pub video: VideoSpec,
    pub teacher: Box<dyn Policy>,
    pub train: Vec<AbrEnv>,
    pub eval: Vec<AbrEnv>,
}

pub fn abr_setup(cfg: &RunConfig) -> Result<AbrSetup> {
    let video = cfg.abr.video.clone();
    let env = |t| AbrEnv::new(video.clone(), t);
    let train = cfg
        .abr
        .train
        .load(false)?
        .into_iter()
        .map(|t| env(t).map(|e| e.with_random_start(cfg.abr.random_start)))
        .collect::<Result<_>>()?;
    let eval = cfg.abr.eval.load(true)?.into_iter().map(env).collect::<Result<_>>()?;
    Ok(AbrSetup { teacher: cfg.abr.teacher.build(&video), video, train, eval })
}

/// States visited by `teacher` on every evaluation environment.
pub fn held_out_states(envs: &[AbrEnv], teacher: &dyn Policy, seed_value: u64) -> Result<Vec<State>> {
    let per_env: Vec<Vec<State>> = envs
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut env = e.clone();
            let t = rollout(&mut env, teacher, usize::MAX, 1.0, seed::derive(seed_value, i as u64))?;
            Ok(t.steps.into_iter().map(|s| s.state).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_env.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardSummary {
    pub mean: f64,
    pub per_trace: Vec<f64>,
}

impl RewardSummary {
    pub fn new(per_trace: Vec<f64>) -> Self {
        Self { mean: mean(&per_trace), per_trace }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn episode_summary(envs: &[AbrEnv], policy: &dyn Policy, seed_value: u64) -> Result<RewardSummary> {
    let rewards = distill::episode_returns(envs, policy, usize::MAX, seed::derive(seed_value, EVAL_ROLLOUT_STREAM))?;
    Ok(RewardSummary::new(rewards))
}

fn class_names(video: &VideoSpec) -> Vec<String> {
    video.bitrates_kbps.iter().map(|r| format!("{r} kbps")).collect()
}

/// Scorer weights: the configured ones, or a fit on held-out matrices.
pub fn routing_theta(cfg: &RoutingConfig) -> Result<[f64; 4]> {
    if let Some(t) = cfg.theta {
        return Ok(t);
    }
    let base = cfg.topology.load()?;
    let Some(traffic) = &cfg.traffic else {
        return PathChoiceModel::fit_theta(&[base], &cfg.theta_fit);
    };
    let fit: Vec<Topology> =
        (0..cfg.fit_matrices).map(|i| traffic.apply(&base, seed::derive(FIT_STREAM, i as u64))).collect();
    PathChoiceModel::fit_theta(&fit, &cfg.theta_fit)
}

/// Demand matrix `index` for run seed `seed_value`.
pub fn routing_instance(cfg: &RoutingConfig, seed_value: u64, index: usize) -> Result<Topology> {
    let base = cfg.topology.load()?;
    let t = match &cfg.traffic {
        Some(traffic) => traffic.apply(&base, seed::derive(seed::derive(seed_value, MATRIX_STREAM), index as u64)),
        None => base,
    };
    if t.demands.is_empty() {
        return Err(Error::Validation("topology has no demands to explain".into()));
    }
    Ok(t)
}

/// One optimized mask together with what it was fit to.
pub struct Explained {
    pub model: PathChoiceModel,
    pub hypergraph: Hypergraph,
    pub mask: Mask,
}

pub fn explain(topology: Topology, theta: [f64; 4], opts: &MaskOptions) -> Result<Explained> {
    let model = PathChoiceModel::new(topology, theta)?;
    let hypergraph = model.hypergraph()?;
    let mask = mask::optimize(&model, &hypergraph, opts)?;
    Ok(Explained { model, hypergraph, mask })
}

impl Explained {
    /// Pearson r between per-link mask sums and the traffic the demands put
    /// on each link.
    pub fn traffic_correlation(&self) -> Result<f64> {
        let traffic = route::routed_traffic(self.model.topology(), &self.model.baseline_routes());
        route::mask_traffic_correlation(&self.mask.w, &traffic)
    }

    /// ‖W‖ over ‖I‖.
    pub fn norm_ratio(&self) -> f64 {
        self.mask.loss.norm / self.hypergraph.incidence().sum()
    }
}

fn envelope(cfg: &RunConfig, body: Value) -> Value {
    let mut out = json!({ "config": cfg, "seed": cfg.seed });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

fn comment_line(prefix: &str, cfg: &RunConfig) -> Result<String> {
    Ok(format!("{prefix} seed={} config={}\n", cfg.seed, serde_json::to_string(cfg)?))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, cfg: &RunConfig, body: Value) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(&envelope(cfg, body))?;
    text.push('\n');
    write(dir, name, &text)
}

fn prepare_out(cfg: &RunConfig) -> RunResult<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::from).stage("output")?;
    Ok(cfg.out_dir.clone())
}

fn run_distill(setup: &AbrSetup, cfg: &RunConfig) -> Result<Distilled> {
    distill::distill(&setup.train, setup.teacher.as_ref(), &cfg.distill, &abr::feature_names())
}

/// Distil the teacher, export the tree and evaluate it.
pub fn cmd_distill(cfg: &RunConfig) -> RunResult<Vec<PathBuf>> {
    let cfg = cfg.resolved();
    let dir = prepare_out(&cfg)?;
    let setup = abr_setup(&cfg).stage("setup")?;
    let run = run_distill(&setup, &cfg).stage("distill")?;
    let teacher = setup.teacher.as_ref();
    let (teacher_r, tree_r, unpruned_r) = (|| {
        Ok((
            episode_summary(&setup.eval, teacher, cfg.seed)?,
            episode_summary(&setup.eval, &run.tree, cfg.seed)?,
            episode_summary(&setup.eval, &run.unpruned, cfg.seed)?,
        ))
    })()
    .stage("evaluate")?;
    let states = held_out_states(&setup.eval, teacher, cfg.seed).stage("evaluate")?;
    let fid = distill::fidelity(&run.tree, teacher, &states).stage("evaluate")?;

    let out = (|| {
        Ok(vec![
            write_json(&dir, "tree.json", &cfg, json!({ "tree": run.tree }))?,
            write(
                &dir,
                "tree.dot",
                &format!("{}{}", comment_line("//", &cfg)?, run.tree.to_dot(&class_names(&setup.video))),
            )?,
            write_json(
                &dir,
                "fidelity.json",
                &cfg,
                json!({
                    "accuracy": fid.accuracy,
                    "rmse": fid.rmse,
                    "held_out_states": states.len(),
                    "leaves": run.tree.leaf_count(),
                    "dataset_size": run.dataset.len(),
                    "iterations_run": run.report.iterations_run,
                }),
            )?,
            write_json(
                &dir,
                "reward_report.json",
                &cfg,
                json!({
                    "teacher": teacher_r,
                    "tree": tree_r,
                    "unpruned": { "leaves": run.unpruned.leaf_count(), "reward": unpruned_r },
                    "tree_vs_teacher": tree_r.mean / teacher_r.mean,
                    "absent_actions": run.absent_actions,
                }),
            )?,
        ])
    })()
    .stage("write")?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct TopEntry {
    hyperedge: usize,
    vertex: usize,
    demand: String,
    link: String,
    value: f64,
}

fn top_entries(h: &Hypergraph, ranked: &[RankedConnection]) -> Vec<TopEntry> {
    ranked
        .iter()
        .map(|r| TopEntry {
            hyperedge: r.hyperedge,
            vertex: r.vertex,
            demand: h.edge_labels.get(r.hyperedge).cloned().unwrap_or_default(),
            link: h.vertex_labels.get(r.vertex).cloned().unwrap_or_default(),
            value: r.value,
        })
        .collect()
}

/// Optimize a mask for the routing model on one demand matrix and report
/// the strongest connections, the loss trace and the traffic correlation.
pub fn cmd_explain_graph(cfg: &RunConfig) -> RunResult<Vec<PathBuf>> {
    let cfg = cfg.resolved();
    let dir = prepare_out(&cfg)?;
    let theta = routing_theta(&cfg.routing).stage("fit-theta")?;
    let topology = routing_instance(&cfg.routing, cfg.seed, 0).stage("setup")?;
    let ex = explain(topology, theta, &cfg.mask).stage("mask")?;
    let ranked = mask::rank_connections(&ex.mask.w, ex.hypergraph.incidence(), cfg.top_k);
    let correlation = match ex.traffic_correlation() {
        Ok(r) => json!({ "r": r }),
        Err(e @ Error::UndefinedCorrelation(_)) => json!({ "r": null, "reason": e.to_string() }),
        Err(e) => return Err(e).stage("report"),
    };
    let points = route::reroute_points(&ex.model, &ex.mask.w).stage("report")?;
    let reroute = match route::reroute_indicator_eval(points, 10) {
        Ok(rep) => json!({ "quadrant_fraction": rep.quadrant_fraction, "points": rep.points }),
        Err(e @ Error::InsufficientData(_)) => json!({ "quadrant_fraction": null, "reason": e.to_string() }),
        Err(e) => return Err(e).stage("report"),
    };

    let out = (|| {
        let header = comment_line("#", &cfg)?;
        Ok(vec![
            write(&dir, "mask.csv", &format!("{header}{}", ex.mask.to_csv(ex.hypergraph.incidence())))?,
            write_json(
                &dir,
                "topk.json",
                &cfg,
                json!({ "theta": theta, "top_k": top_entries(&ex.hypergraph, &ranked) }),
            )?,
            write(&dir, "loss_trace.csv", &format!("{header}{}", ex.mask.trace_csv()))?,
            write_json(
                &dir,
                "correlation.json",
                &cfg,
                json!({
                    "theta": theta,
                    "loss": ex.mask.loss,
                    "norm_ratio": ex.norm_ratio(),
                    "traffic_correlation": correlation,
                    "reroute": reroute,
                }),
            )?,
        ])
    })()
    .stage("write")?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LeafRow {
    pub leaves: usize,
    pub actual_leaves: usize,
    pub fidelity: Fidelity,
    pub reward: RewardSummary,
    pub oversampled_reward: RewardSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Means over restarts.
    pub norm_ratio: f64,
    pub entropy: f64,
    pub divergence: f64,
}

/// One shared dataset, one tree per leaf budget, plain and oversampled.
pub fn leaf_sweep(cfg: &RunConfig, setup: &AbrSetup) -> Result<(RewardSummary, Vec<LeafRow>)> {
    let teacher = setup.teacher.as_ref();
    let names = abr::feature_names();
    let (dataset, report) = distill::collect_dataset(&setup.train, teacher, None, &cfg.distill)?;
    let training = distill::training_set(&dataset, &setup.train, teacher, &cfg.distill)?;
    let plain_cfg = distill::DistillConfig { oversample_min_freq: None, ..cfg.distill.clone() };
    let over_cfg = distill::DistillConfig {
        oversample_min_freq: Some(cfg.distill.oversample_min_freq.unwrap_or(0.01)),
        ..cfg.distill.clone()
    };
    let plain = distill::finish(dataset.clone(), training.clone(), report.clone(), &plain_cfg, &names)?;
    let over = distill::finish(dataset, training, report, &over_cfg, &names)?;
    let states = held_out_states(&setup.eval, teacher, cfg.seed)?;
    let teacher_r = episode_summary(&setup.eval, teacher, cfg.seed)?;
    let rows = cfg
        .eval
        .leaves
        .iter()
        .map(|&m| {
            let tree = crate::tree::ccp_prune(&plain.unpruned, m)?;
            let over_tree = crate::tree::ccp_prune(&over.unpruned, m)?;
            Ok(LeafRow {
                leaves: m,
                actual_leaves: tree.leaf_count(),
                fidelity: distill::fidelity(&tree, teacher, &states)?,
                reward: episode_summary(&setup.eval, &tree, cfg.seed)?,
                oversampled_reward: episode_summary(&setup.eval, &over_tree, cfg.seed)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((teacher_r, rows))
}

/// Each λ1 against the base λ2 and each λ2 against the base λ1, averaged
/// over `eval.seeds` jittered restarts on one demand matrix.
pub fn lambda_sweep(cfg: &RunConfig, theta: [f64; 4], topology: &Topology) -> Result<Vec<LambdaRow>> {
    let base = &cfg.mask;
    let mut grid: Vec<(f64, f64)> = cfg.eval.lambda1.iter().map(|&l1| (l1, base.lambda2)).collect();
    grid.extend(cfg.eval.lambda2.iter().map(|&l2| (base.lambda1, l2)));
    let model = PathChoiceModel::new(topology.clone(), theta)?;
    let h = model.hypergraph()?;
    let total = h.incidence().sum();
    let runs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..cfg.eval.seeds).map(move |s| (g, s))).collect();
    let losses: Vec<mask::LossBreakdown> = runs
        .par_iter()
        .map(|&(g, s)| {
            let opts = MaskOptions {
                lambda1: grid[g].0,
                lambda2: grid[g].1,
                init_jitter: cfg.eval.init_jitter,
                seed: seed::derive(cfg.seed, s as u64),
                ..base.clone()
            };
            mask::optimize(&model, &h, &opts).map(|m| m.loss)
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &(lambda1, lambda2))| {
            let mine: Vec<&mask::LossBreakdown> =
                runs.iter().zip(&losses).filter(|((gi, _), _)| *gi == g).map(|(_, l)| l).collect();
            let avg = |f: fn(&mask::LossBreakdown) -> f64| mine.iter().map(|l| f(l)).sum::<f64>() / mine.len() as f64;
            LambdaRow {
                lambda1,
                lambda2,
                norm_ratio: avg(|l| l.norm) / total,
                entropy: avg(|l| l.entropy),
                divergence: avg(|l| l.divergence),
            }
        })
        .collect())
}

/// Leaf-budget comparison for ABR or a λ sweep for masks.
pub fn cmd_eval(cfg: &RunConfig) -> RunResult<Vec<PathBuf>> {
    let cfg = cfg.resolved();
    let dir = prepare_out(&cfg)?;
    let body = match cfg.eval.target {
        EvalTarget::Abr => {
            let setup = abr_setup(&cfg).stage("setup")?;
            let (teacher, rows) = leaf_sweep(&cfg, &setup).stage("leaf-sweep")?;
            json!({ "target": "abr", "teacher": teacher, "rows": rows })
        }
        EvalTarget::Mask => {
            let theta = routing_theta(&cfg.routing).stage("fit-theta")?;
            let topology = routing_instance(&cfg.routing, cfg.seed, 0).stage("setup")?;
            let rows = lambda_sweep(&cfg, theta, &topology).stage("lambda-sweep")?;
            json!({ "target": "mask", "theta": theta, "rows": rows })
        }
    };
    let path = write_json(&dir, "eval_report.json", &cfg, body).stage("write")?;
    Ok(vec![path])
}

/// Dispatch on `cfg.pipeline`.
pub fn run(cfg: &RunConfig) -> RunResult<Vec<PathBuf>> {
    match cfg.pipeline {
        crate::config::Pipeline::Distill => cmd_distill(cfg),
        crate::config::Pipeline::ExplainGraph => cmd_explain_graph(cfg),
        crate::config::Pipeline::Eval => cmd_eval(cfg),
    }
}

/// Load a `tree.json` artifact back into a tree.
pub fn load_tree_artifact(text: &str) -> Result<DecisionTree> {
    let v: Value = serde_json::from_str(text)?;
    let tree = v.get("tree").ok_or_else(|| Error::Validation("artifact has no `tree` field".into()))?;
    DecisionTree::from_json(&tree.to_string())
}
