//! Run configuration shared by the CLI and the pipelines.
//!
//! A config is one JSON document. Every section has defaults, unknown keys
//! are rejected, and schema violations report the offending field path.

use crate::abr::{self, suite, BandwidthTrace, MpcTeacher, RungSkippingTeacher, TraceKind, VideoSpec};
use crate::distill::DistillConfig;
use crate::env::Policy;
use crate::error::{Error, Result};
use crate::hypergraph::Topology;
use crate::mask::MaskOptions;
use crate::route::{ThetaFit, TrafficConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    #[default]
    Distill,
    ExplainGraph,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pipeline: Pipeline,
    /// Master seed; copied into the distillation and mask sections on resolve.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub abr: AbrConfig,
    pub distill: DistillConfig,
    pub mask: MaskOptions,
    pub routing: RoutingConfig,
    pub eval: EvalConfig,
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::Distill,
            seed: 0,
            out_dir: PathBuf::from("out"),
            abr: AbrConfig::default(),
            distill: DistillConfig { iterations: 2, resample_factor: 3.0, ..DistillConfig::default() },
            mask: MaskOptions::default(),
            routing: RoutingConfig::default(),
            eval: EvalConfig::default(),
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherSpec {
    Mpc { lookahead: usize },
    /// MPC that avoids `skipped` rungs unless the forecast is inside the window.
    RungSkipping { lookahead: usize, skipped: Vec<usize>, window_kbps: (f64, f64) },
}

impl TeacherSpec {
    pub fn build(&self, video: &VideoSpec) -> Box<dyn Policy> {
        match self {
            TeacherSpec::Mpc { lookahead } => Box::new(MpcTeacher::new(video, *lookahead)),
            TeacherSpec::RungSkipping { lookahead, skipped, window_kbps } => {
                Box::new(RungSkippingTeacher::new(MpcTeacher::new(video, *lookahead), skipped, *window_kbps))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSet {
    /// Seeded Markov traces; `seed` picks the family, not the run.
    Markov { count: usize, seed: u64 },
    Fixed { rates_kbps: Vec<f64> },
    Synthetic { traces: Vec<TraceKind>, seed: u64 },
    Files { paths: Vec<PathBuf> },
}

impl TraceSet {
    pub fn is_empty(&self) -> bool {
        match self {
            TraceSet::Markov { count, .. } => *count == 0,
            TraceSet::Fixed { rates_kbps } => rates_kbps.is_empty(),
            TraceSet::Synthetic { traces, .. } => traces.is_empty(),
            TraceSet::Files { paths } => paths.is_empty(),
        }
    }

    /// `eval` selects the evaluation stream for Markov sets.
    pub fn load(&self, eval: bool) -> Result<Vec<BandwidthTrace>> {
        match self {
            TraceSet::Markov { count, seed } if eval => suite::eval_suite_of(*seed, *count),
            TraceSet::Markov { count, seed } => suite::training_suite(*seed, *count),
            TraceSet::Fixed { rates_kbps } => suite::fixed_link_suite(rates_kbps),
            TraceSet::Synthetic { traces, seed } => traces
                .iter()
                .enumerate()
                .map(|(i, k)| abr::synth_trace(k, crate::seed::derive(*seed, i as u64)))
                .collect(),
            TraceSet::Files { paths } => paths.iter().map(abr::load_trace).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbrConfig {
    pub video: VideoSpec,
    pub teacher: TeacherSpec,
    pub train: TraceSet,
    pub eval: TraceSet,
    /// Training episodes start at a seed-chosen offset into their trace.
    pub random_start: bool,
}

impl Default for AbrConfig {
    fn default() -> Self {
        Self {
            video: VideoSpec::default(),
            teacher: TeacherSpec::Mpc { lookahead: 5 },
            train: TraceSet::Markov { count: 60, seed: 0 },
            eval: TraceSet::Markov { count: suite::EVAL_SUITE_SIZE, seed: 0 },
            random_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    Nsfnet,
    Example,
    File { path: PathBuf },
}

impl TopologySource {
    pub fn load(&self) -> Result<Topology> {
        match self {
            TopologySource::Nsfnet => Ok(Topology::nsfnet()),
            TopologySource::Example => Ok(Topology::example()),
            TopologySource::File { path } => Topology::from_json(&std::fs::read_to_string(path)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub topology: TopologySource,
    /// Random background and all-pairs demands; `None` keeps the topology's own
    /// loads and demands.
    pub traffic: Option<TrafficConfig>,
    /// Fixed scorer weights; fitted on `fit_matrices` held-out matrices when absent.
    pub theta: Option<[f64; 4]>,
    pub theta_fit: ThetaFit,
    pub fit_matrices: usize,
    /// Demand matrices averaged over in evaluation sweeps.
    pub matrices: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            topology: TopologySource::Nsfnet,
            traffic: Some(TrafficConfig::default()),
            theta: None,
            theta_fit: ThetaFit::default(),
            fit_matrices: 10,
            matrices: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    #[default]
    Abr,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub target: EvalTarget,
    /// Leaf budgets compared for the ABR target.
    pub leaves: Vec<usize>,
    /// Swept one at a time against the other's base value for the mask target.
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// Mask restarts per λ, each drawing its initial `W′` from its own seed.
    pub seeds: usize,
    pub init_jitter: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target: EvalTarget::Abr,
            leaves: vec![20, 200, 2000],
            lambda1: vec![0.05, 0.25, 1.0],
            lambda2: vec![0.2, 1.0, 5.0],
            seeds: 5,
            init_jitter: 0.5,
        }
    }
}

fn bad<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config { path: path.into(), message: message.into() })
}

/// Prefix the path of a nested `Config` error with `section`.
fn within(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { path, message } => Error::Config { path: format!("{section}.{path}"), message },
        Error::Validation(message) | Error::Domain(message) => Error::Config { path: section.into(), message },
        other => other,
    })
}

impl RunConfig {
    /// Parse and validate; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config { path: if path == "." { "<root>".into() } else { path }, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: "<file>".into(), message: format!("{}: {e}", path.display()) })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        within("abr.video", self.abr.video.validate())?;
        if self.abr.train.is_empty() {
            return bad("abr.train", "needs at least one trace");
        }
        if self.abr.eval.is_empty() {
            return bad("abr.eval", "needs at least one trace");
        }
        match &self.abr.teacher {
            TeacherSpec::Mpc { lookahead } | TeacherSpec::RungSkipping { lookahead, .. } if *lookahead == 0 => {
                return bad("abr.teacher.lookahead", "must be at least 1");
            }
            TeacherSpec::RungSkipping { skipped, .. }
                if skipped.iter().any(|&s| s >= self.abr.video.bitrates_kbps.len()) =>
            {
                return bad("abr.teacher.skipped", "rung index outside the ladder");
            }
            _ => {}
        }
        within("distill", self.distill.validate())?;
        within("mask", self.mask.validate())?;
        if let Some(t) = &self.routing.traffic {
            within("routing.traffic", t.validate())?;
        }
        if self.routing.theta.is_none() && self.routing.fit_matrices == 0 {
            return bad("routing.fit_matrices", "must be positive when theta is not given");
        }
        if self.routing.matrices == 0 {
            return bad("routing.matrices", "must be at least 1");
        }
        if self.pipeline == Pipeline::Eval {
            match self.eval.target {
                EvalTarget::Abr if self.eval.leaves.is_empty() => return bad("eval.leaves", "sweep list is empty"),
                EvalTarget::Abr if self.eval.leaves.contains(&0) => {
                    return bad("eval.leaves", "leaf budgets must be positive")
                }
                EvalTarget::Mask if self.eval.lambda1.is_empty() => {
                    return bad("eval.lambda1", "sweep list is empty")
                }
                EvalTarget::Mask if self.eval.lambda2.is_empty() => {
                    return bad("eval.lambda2", "sweep list is empty")
                }
                _ => {}
            }
            if self.eval.seeds == 0 {
                return bad("eval.seeds", "must be at least 1");
            }
            if self.eval.lambda1.iter().chain(&self.eval.lambda2).any(|l| !(*l >= 0.0 && l.is_finite())) {
                return bad("eval.lambda", "λ values must be non-negative numbers");
            }
        }
        Ok(())
    }

    /// Copy the master seed into every section that draws randomness.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.distill.seed = self.seed;
        out.mask.seed = self.seed;
        out
    }
}
