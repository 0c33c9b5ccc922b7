//! Teacher-to-tree distillation: aggregated trace collection with the
//! student in control, advantage weighting, resampling, CART fitting and
//! pruning to a leaf budget.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{advantage_weights, Action, ActionSpace, Environment, McConfig, Policy, State};
use crate::error::{domain, Error, Result};
use crate::seed;
use crate::tree::{ccp_prune, fit, DecisionTree, FitOptions, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: State,
    /// Teacher label.
    pub action: Action,
    pub weight: f64,
    pub iteration: usize,
    /// Index of the environment the state was visited in.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDataset {
    pub samples: Vec<Sample>,
    pub action_space: ActionSpace,
}

impl WeightedDataset {
    pub fn new(action_space: ActionSpace) -> Self {
        Self { samples: Vec::new(), action_space }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_actions(&self) -> Option<usize> {
        match self.action_space {
            ActionSpace::Discrete(n) => Some(n),
            ActionSpace::Continuous => None,
        }
    }

    /// Label counts per discrete action.
    pub fn action_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_actions().unwrap_or(0)];
        for s in &self.samples {
            if let Action::Discrete(a) = s.action {
                if a < counts.len() {
                    counts[a] += 1;
                }
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return domain("dataset is empty");
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.weight >= 0.0 && s.weight.is_finite()) {
                return domain(format!("sample {i} has invalid weight {}", s.weight));
            }
            if s.state.features.iter().any(|x| !x.is_finite()) {
                return domain(format!("sample {i} has a non-finite feature"));
            }
            self.action_space.validate(&s.action)?;
        }
        Ok(())
    }

    /// One row per sample: provenance, weight, label, then features.
    pub fn to_csv(&self, feature_names: &[String]) -> String {
        let d = self.samples.first().map_or(0, |s| s.state.features.len());
        let mut out = String::from("iteration,source,weight,action");
        for f in 0..d {
            out.push(',');
            out.push_str(feature_names.get(f).map_or(&format!("x{f}"), |s| s));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}", s.iteration, s.source, s.weight, s.action.value()));
            for x in &s.state.features {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Collection iterations, the first of which is teacher-driven.
    pub iterations: usize,
    /// Episodes per environment per iteration.
    pub episodes_per_env: usize,
    /// Probability that the teacher controls a step, by iteration; the last
    /// entry repeats.
    pub beta: Vec<f64>,
    pub max_leaves: usize,
    /// Defaults to `resample_factor` times the dataset size.
    pub resample_size: Option<usize>,
    pub resample_factor: f64,
    pub resample: bool,
    /// Minimum label frequency enforced after resampling.
    pub oversample_min_freq: Option<f64>,
    pub gamma: f64,
    pub horizon: usize,
    pub n_rollouts: usize,
    pub max_steps: usize,
    pub agreement_stop: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            episodes_per_env: 1,
            beta: vec![1.0, 0.0],
            max_leaves: 200,
            resample_size: None,
            resample_factor: 1.0,
            resample: true,
            oversample_min_freq: None,
            gamma: 0.99,
            horizon: 20,
            n_rollouts: 8,
            max_steps: 10_000,
            agreement_stop: 0.98,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Err(Error::Config { path: path.into(), message: message.into() });
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if self.episodes_per_env == 0 {
            return bad("episodes_per_env", "must be at least 1");
        }
        // one leaf is a stump, still a valid deployable tree
        if self.max_leaves < 1 {
            return bad("max_leaves", "must be at least 1");
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad("beta", "must be a non-empty list of probabilities");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if self.horizon == 0 || self.n_rollouts == 0 || self.max_steps == 0 {
            return bad("horizon", "horizon, n_rollouts and max_steps must be at least 1");
        }
        if self.resample_size == Some(0) {
            return bad("resample_size", "must be at least 1");
        }
        if !(self.resample_factor > 0.0 && self.resample_factor.is_finite()) {
            return bad("resample_factor", "must be positive");
        }
        if let Some(f) = self.oversample_min_freq {
            if !(f > 0.0 && f < 1.0) {
                return bad("oversample_min_freq", "must lie in (0, 1)");
            }
        }
        if !(0.0..=1.0).contains(&self.agreement_stop) {
            return bad("agreement_stop", "must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn mc(&self) -> McConfig {
        McConfig { horizon: self.horizon, n_rollouts: self.n_rollouts, gamma: self.gamma, seed: seed::derive(self.seed, 0xadf) }
    }

    fn beta_at(&self, iteration: usize) -> f64 {
        self.beta[iteration.min(self.beta.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectReport {
    pub iterations_run: usize,
    /// Fraction of student-controlled steps where the student agreed with the
    /// teacher, per iteration (`None` when the teacher drove every step).
    pub agreement: Vec<Option<f64>>,
    pub stopped_early: bool,
}

fn teacher_label<P: Policy + ?Sized>(teacher: &P, state: &State, space: ActionSpace) -> Result<Action> {
    let dump = || serde_json::to_string(&state.features).unwrap_or_default();
    let action = catch_unwind(AssertUnwindSafe(|| teacher.act(state)))
        .map_err(|_| Error::TeacherFailure { state: dump(), message: "teacher panicked".into() })?;
    space.validate(&action).map_err(|e| Error::TeacherFailure { state: dump(), message: e.to_string() })?;
    Ok(action)
}

struct Episode {
    samples: Vec<Sample>,
    student_steps: usize,
    agreed: usize,
}

fn run_episode<E: Environment, T: Policy + ?Sized>(
    env: &E,
    source: usize,
    teacher: &T,
    student: Option<&dyn Policy>,
    iteration: usize,
    beta: f64,
    max_steps: usize,
    episode_seed: u64,
) -> Result<Episode> {
    let mut env = env.clone();
    let space = env.action_space();
    let mut rng = seed::rng(episode_seed, 0xbe7a);
    let mut state = env.reset(episode_seed);
    let mut ep = Episode { samples: Vec::new(), student_steps: 0, agreed: 0 };
    while !env.is_done() && ep.samples.len() < max_steps {
        let label = teacher_label(teacher, &state, space)?;
        let teacher_drives = match student {
            None => true,
            Some(_) => beta >= 1.0 || (beta > 0.0 && rng.gen::<f64>() < beta),
        };
        let action = if teacher_drives {
            label
        } else {
            let a = student.expect("student present").act(&state);
            ep.student_steps += 1;
            if a == label {
                ep.agreed += 1;
            }
            a
        };
        let t = env.step(action)?;
        ep.samples.push(Sample { state, action: label, weight: 1.0, iteration, source });
        state = t.next;
    }
    Ok(ep)
}

/// Fit the intermediate student on the aggregated labels.
fn interim_student(dataset: &WeightedDataset, cfg: &DistillConfig) -> Result<DecisionTree> {
    fit_tree(dataset, cfg.max_leaves, &[])
}

/// Aggregated collection. Iteration 0 follows the teacher; later iterations
/// hand control to `student` (or, when `None`, to a tree refit on the data
/// gathered so far) with probability `1 - beta`, while the teacher labels
/// every visited state. Stops once student/teacher agreement on an
/// iteration's rollouts reaches `agreement_stop`.
pub fn collect_dataset<E: Environment, T: Policy + ?Sized>(
    envs: &[E],
    teacher: &T,
    student: Option<&dyn Policy>,
    cfg: &DistillConfig,
) -> Result<(WeightedDataset, CollectReport)> {
    cfg.validate()?;
    if envs.is_empty() {
        return domain("no environments to collect from");
    }
    let space = envs[0].action_space();
    let mut dataset = WeightedDataset::new(space);
    let mut report = CollectReport { iterations_run: 0, agreement: Vec::new(), stopped_early: false };
    for iteration in 0..cfg.iterations {
        let refit;
        let controller: Option<&dyn Policy> = if iteration == 0 {
            None
        } else if let Some(s) = student {
            Some(s)
        } else {
            refit = interim_student(&dataset, cfg)?;
            Some(&refit as &dyn Policy)
        };
        let beta = if iteration == 0 { 1.0 } else { cfg.beta_at(iteration) };
        let jobs: Vec<(usize, usize)> =
            (0..envs.len()).flat_map(|e| (0..cfg.episodes_per_env).map(move |k| (e, k))).collect();
        let iter_seed = seed::derive(cfg.seed, iteration as u64);
        let episodes: Vec<Episode> = jobs
            .par_iter()
            .map(|&(e, k)| {
                let s = seed::derive(iter_seed, (e * cfg.episodes_per_env + k) as u64);
                run_episode(&envs[e], e, teacher, controller, iteration, beta, cfg.max_steps, s)
            })
            .collect::<Result<_>>()?;
        let (mut steps, mut agreed) = (0, 0);
        for ep in episodes {
            steps += ep.student_steps;
            agreed += ep.agreed;
            dataset.samples.extend(ep.samples);
        }
        report.iterations_run = iteration + 1;
        let agreement = (steps > 0).then(|| agreed as f64 / steps as f64);
        report.agreement.push(agreement);
        log::info!("collection iteration {iteration}: {} samples, agreement {agreement:?}", dataset.len());
        if matches!(agreement, Some(a) if a >= cfg.agreement_stop) {
            report.stopped_early = iteration + 1 < cfg.iterations;
            break;
        }
    }
    Ok((dataset, report))
}

/// Replace every weight by the advantage of its state, `V(s) - min_a Q(s, a)`,
/// estimated once per unique `(source, state)`. Continuous action spaces get
/// uniform weights.
pub fn attach_advantages<E: Environment, T: Policy + ?Sized>(
    dataset: &WeightedDataset,
    envs: &[E],
    teacher: &T,
    mc: &McConfig,
) -> Result<WeightedDataset> {
    let mut out = dataset.clone();
    if dataset.action_space == ActionSpace::Continuous {
        log::warn!("advantage weighting needs a discrete action space; using uniform weights");
        out.samples.iter_mut().for_each(|s| s.weight = 1.0);
        return Ok(out);
    }
    if let Some(s) = dataset.samples.iter().find(|s| s.source >= envs.len()) {
        return domain(format!("sample references environment {} of {}", s.source, envs.len()));
    }
    let mut index: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
    let mut unique: Vec<(usize, &State)> = Vec::new();
    let slots: Vec<usize> = dataset
        .samples
        .iter()
        .map(|s| {
            *index.entry((s.source, s.state.key())).or_insert_with(|| {
                unique.push((s.source, &s.state));
                unique.len() - 1
            })
        })
        .collect();
    log::info!("estimating advantages for {} unique states", unique.len());
    let weights = advantage_weights(|src| envs[src].clone(), teacher, &unique, mc)?;
    for (s, slot) in out.samples.iter_mut().zip(slots) {
        // Monte-Carlo noise can push estimates slightly negative
        s.weight = weights[slot].max(0.0);
    }
    Ok(out)
}

/// Draw `n` samples with replacement, proportionally to weight (uniformly
/// when the weights carry no mass). Output weights are 1.
pub fn resample(dataset: &WeightedDataset, n: usize, seed_value: u64) -> Result<WeightedDataset> {
    if n == 0 {
        return domain("resample size must be at least 1");
    }
    if dataset.is_empty() {
        return domain("cannot resample an empty dataset");
    }
    let mut rng = seed::rng(seed_value, 0x5e5a);
    let total: f64 = dataset.samples.iter().map(|s| s.weight).sum();
    let pick: Vec<usize> = if total > 0.0 && total.is_finite() {
        let dist = WeightedIndex::new(dataset.samples.iter().map(|s| s.weight))
            .map_err(|e| Error::Domain(format!("invalid weights: {e}")))?;
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    } else {
        (0..n).map(|_| rng.gen_range(0..dataset.len())).collect()
    };
    let samples = pick
        .into_iter()
        .map(|i| Sample { weight: 1.0, ..dataset.samples[i].clone() })
        .collect();
    Ok(WeightedDataset { samples, action_space: dataset.action_space })
}

/// Duplicate samples of every under-represented action until its frequency
/// reaches `min_freq`. Returns the actions that are absent and therefore
/// cannot be oversampled.
pub fn oversample_actions(dataset: &WeightedDataset, min_freq: f64) -> Result<(WeightedDataset, Vec<usize>)> {
    let Some(n_actions) = dataset.n_actions() else {
        return domain("oversampling needs discrete labels");
    };
    if !(min_freq > 0.0 && min_freq * n_actions as f64 * (1.0 + 1e-12) < 1.0) {
        return domain(format!("min_freq must lie in (0, 1/{n_actions})"));
    }
    let mut out = dataset.clone();
    let mut by_action: Vec<Vec<usize>> = vec![Vec::new(); n_actions];
    for (i, s) in dataset.samples.iter().enumerate() {
        if let Action::Discrete(a) = s.action {
            by_action[a].push(i);
        }
    }
    let absent: Vec<usize> = (0..n_actions).filter(|&a| by_action[a].is_empty()).collect();
    for &a in &absent {
        log::warn!("action {a} never appears in the dataset and cannot be oversampled");
    }
    let mut counts: Vec<usize> = by_action.iter().map(Vec::len).collect();
    let mut cursor = vec![0usize; n_actions];
    // adding copies of one action dilutes the others, so iterate to a fixpoint
    loop {
        let mut changed = false;
        for a in 0..n_actions {
            if counts[a] == 0 {
                continue;
            }
            let total = out.samples.len() as f64;
            let c = counts[a] as f64;
            if c / total >= min_freq {
                continue;
            }
            let k = ((min_freq * total - c) / (1.0 - min_freq)).ceil().max(1.0) as usize;
            for _ in 0..k {
                let src = by_action[a][cursor[a] % by_action[a].len()];
                cursor[a] += 1;
                out.samples.push(dataset.samples[src].clone());
            }
            counts[a] += k;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    Ok((out, absent))
}

/// Fit a tree on the dataset's features, labels and weights with at most
/// `max_leaves` leaves (`usize::MAX` grows until pure).
pub fn fit_tree(dataset: &WeightedDataset, max_leaves: usize, feature_names: &[String]) -> Result<DecisionTree> {
    dataset.validate()?;
    let x: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.state.features.clone()).collect();
    let y: Vec<f64> = dataset.samples.iter().map(|s| s.action.value()).collect();
    let w: Vec<f64> = dataset.samples.iter().map(|s| s.weight).collect();
    let mut opts = match dataset.action_space {
        ActionSpace::Discrete(n) => FitOptions::classify(max_leaves, n),
        ActionSpace::Continuous => FitOptions::regress(max_leaves),
    };
    opts.feature_names = feature_names.to_vec();
    fit(&x, &y, &w, &opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    /// Fraction of states where tree and teacher pick the same action.
    pub accuracy: f64,
    /// Root-mean-square difference of the numeric outputs.
    pub rmse: f64,
}

pub fn fidelity<T: Policy + ?Sized>(tree: &DecisionTree, teacher: &T, states: &[State]) -> Result<Fidelity> {
    if states.is_empty() {
        return domain("fidelity needs at least one evaluation state");
    }
    // collected before summing so the result does not depend on scheduling
    let rows: Vec<(usize, f64)> = states
        .par_iter()
        .map(|s| {
            let a = tree.act(s);
            let b = teacher.act(s);
            let agree = match tree.mode {
                Mode::Classify => (a == b) as usize,
                Mode::Regress => 0,
            };
            (agree, (a.value() - b.value()).powi(2))
        })
        .collect();
    let agree: usize = rows.iter().map(|r| r.0).sum();
    let sq: f64 = rows.iter().map(|r| r.1).sum();
    let n = states.len() as f64;
    let accuracy = match tree.mode {
        Mode::Classify => agree as f64 / n,
        Mode::Regress => f64::NAN,
    };
    Ok(Fidelity { accuracy, rmse: (sq / n).sqrt() })
}

/// Undiscounted episode return of `policy` in each environment.
pub fn episode_returns<E: Environment, P: Policy + ?Sized>(
    envs: &[E],
    policy: &P,
    max_steps: usize,
    seed_value: u64,
) -> Result<Vec<f64>> {
    envs.par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut env = e.clone();
            crate::env::rollout(&mut env, policy, max_steps, 1.0, seed::derive(seed_value, i as u64))
                .map(|t| t.reward_sum())
        })
        .collect()
}

/// Every trained artifact of one distillation run.
#[derive(Debug, Clone)]
pub struct Distilled {
    pub dataset: WeightedDataset,
    /// Training set after weighting, resampling and oversampling.
    pub training_set: WeightedDataset,
    pub unpruned: DecisionTree,
    pub tree: DecisionTree,
    pub report: CollectReport,
    /// Actions that oversampling could not cover.
    pub absent_actions: Vec<usize>,
}

/// Full pipeline: collect, weight by advantage, resample, optionally
/// oversample, grow until pure, prune to `max_leaves`.
pub fn distill<E: Environment, T: Policy + ?Sized>(
    envs: &[E],
    teacher: &T,
    cfg: &DistillConfig,
    feature_names: &[String],
) -> Result<Distilled> {
    let (dataset, report) = collect_dataset(envs, teacher, None, cfg)?;
    let training_set = training_set(&dataset, envs, teacher, cfg)?;
    finish(dataset, training_set, report, cfg, feature_names)
}

/// Advantage-weighted resample of `dataset`, or the dataset itself when
/// resampling is off.
pub fn training_set<E: Environment, T: Policy + ?Sized>(
    dataset: &WeightedDataset,
    envs: &[E],
    teacher: &T,
    cfg: &DistillConfig,
) -> Result<WeightedDataset> {
    if !cfg.resample {
        return Ok(dataset.clone());
    }
    let weighted = attach_advantages(dataset, envs, teacher, &cfg.mc())?;
    let n = cfg.resample_size.unwrap_or_else(|| ((dataset.len() as f64 * cfg.resample_factor).round() as usize).max(1));
    resample(&weighted, n, seed::derive(cfg.seed, 0x7e5))
}

/// Fit and prune from an already collected training set.
pub fn finish(
    dataset: WeightedDataset,
    training_set: WeightedDataset,
    report: CollectReport,
    cfg: &DistillConfig,
    feature_names: &[String],
) -> Result<Distilled> {
    let (training_set, absent_actions) = match cfg.oversample_min_freq {
        Some(f) => oversample_actions(&training_set, f)?,
        None => (training_set, Vec::new()),
    };
    let unpruned = fit_tree(&training_set, usize::MAX, feature_names)?;
    let tree = ccp_prune(&unpruned, cfg.max_leaves)?;
    Ok(Distilled { dataset, training_set, unpruned, tree, report, absent_actions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::testing::{Fixed, TableEnv};

    fn ds(actions: &[usize], weights: &[f64], n: usize) -> WeightedDataset {
        WeightedDataset {
            samples: actions
                .iter()
                .zip(weights)
                .enumerate()
                .map(|(i, (&a, &w))| Sample {
                    state: State::new(vec![i as f64]),
                    action: Action::Discrete(a),
                    weight: w,
                    iteration: 0,
                    source: 0,
                })
                .collect(),
            action_space: ActionSpace::Discrete(n),
        }
    }

    #[test]
    fn single_iteration_records_teacher_states() {
        let env = TableEnv::new(6, vec![0.0, 1.0]);
        let cfg = DistillConfig { iterations: 1, ..DistillConfig::default() };
        let (d, r) = collect_dataset(&[env], &Fixed(1), None, &cfg).unwrap();
        let states: Vec<f64> = d.samples.iter().map(|s| s.state.features[0]).collect();
        assert_eq!(states, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(r.iterations_run, 1);
    }

    #[test]
    fn identical_student_stops_after_first_student_iteration() {
        let env = TableEnv::new(6, vec![0.0, 1.0]);
        let cfg = DistillConfig { iterations: 5, ..DistillConfig::default() };
        let (d, r) = collect_dataset(&[env], &Fixed(1), Some(&Fixed(1)), &cfg).unwrap();
        assert_eq!(r.iterations_run, 2);
        assert!(r.stopped_early);
        assert_eq!(r.agreement, vec![None, Some(1.0)]);
        assert_eq!(d.len(), 12);
    }

    struct Broken;
    impl Policy for Broken {
        fn act(&self, _s: &State) -> Action {
            Action::Discrete(9)
        }
    }

    #[test]
    fn teacher_failure_dumps_state() {
        let env = TableEnv::new(3, vec![0.0, 1.0]);
        match collect_dataset(&[env], &Broken, None, &DistillConfig::default()) {
            Err(Error::TeacherFailure { state, .. }) => assert_eq!(state, "[0.0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn equivalent_actions_give_zero_weights_and_uniform_resampling() {
        let env = TableEnv::new(4, vec![2.0, 2.0, 2.0]);
        let cfg = DistillConfig { iterations: 1, ..DistillConfig::default() };
        let (d, _) = collect_dataset(std::slice::from_ref(&env), &Fixed(0), None, &cfg).unwrap();
        let w = attach_advantages(&d, &[env], &Fixed(0), &cfg.mc()).unwrap();
        assert!(w.samples.iter().all(|s| s.weight == 0.0));
        let r = resample(&w, 4000, 1).unwrap();
        let mut counts = [0usize; 4];
        for s in &r.samples {
            counts[s.state.features[0] as usize] += 1;
        }
        // 3 sigma multinomial band around 1000
        let sigma = (4000.0f64 * 0.25 * 0.75).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - 1000.0).abs() <= 3.0 * sigma), "{counts:?}");
    }

    #[test]
    fn degenerate_mass_resamples_one_sample() {
        let r = resample(&ds(&[0, 1, 1], &[1.0, 0.0, 0.0], 2), 50, 3).unwrap();
        assert!(r.samples.iter().all(|s| s.state.features[0] == 0.0 && s.weight == 1.0));
        assert!(resample(&ds(&[0], &[1.0], 2), 0, 0).is_err());
    }

    #[test]
    fn weights_seven_and_zero_normalize_to_one_and_zero() {
        let r = resample(&ds(&[0, 1], &[7.0, 0.0], 2), 100, 5).unwrap();
        assert!(r.samples.iter().all(|s| s.state.features[0] == 0.0));
    }

    #[test]
    fn oversampling_arithmetic() {
        let mut actions = vec![0; 999];
        actions.push(1);
        let d = ds(&actions, &vec![1.0; 1000], 6);
        let (o, absent) = oversample_actions(&d, 0.01).unwrap();
        let counts = o.action_counts();
        let f = counts[1] as f64 / o.len() as f64;
        assert!((0.01..0.02).contains(&f), "{f}");
        assert_eq!(absent, vec![2, 3, 4, 5]);
        assert!(oversample_actions(&d, 0.2).is_err());
    }

    #[test]
    fn balanced_present_actions_untouched() {
        let d = ds(&[0, 1, 0, 1], &[1.0; 4], 6);
        let (o, absent) = oversample_actions(&d, 0.01).unwrap();
        assert_eq!(o, d);
        assert_eq!(absent, vec![2, 3, 4, 5]);
    }

    #[test]
    fn memorized_tree_has_full_fidelity() {
        let d = ds(&[0, 3, 1, 5, 2, 4, 0], &[1.0; 7], 6);
        let t = fit_tree(&d, usize::MAX, &[]).unwrap();
        struct Lookup(Vec<usize>);
        impl Policy for Lookup {
            fn act(&self, s: &State) -> Action {
                Action::Discrete(self.0[s.features[0] as usize])
            }
        }
        let states: Vec<State> = d.samples.iter().map(|s| s.state.clone()).collect();
        let f = fidelity(&t, &Lookup(vec![0, 3, 1, 5, 2, 4, 0]), &states).unwrap();
        assert_eq!(f.accuracy, 1.0);
        assert_eq!(f.rmse, 0.0);
        assert!(fidelity(&t, &Fixed(0), &[]).is_err());
    }

    #[test]
    fn continuous_dataset_gets_uniform_weights() {
        let mut d = ds(&[0, 0], &[5.0, 0.0], 1);
        d.action_space = ActionSpace::Continuous;
        for s in &mut d.samples {
            s.action = Action::Continuous(0.5);
        }
        let env = TableEnv::new(2, vec![1.0]);
        let w = attach_advantages(&d, &[env], &Fixed(0), &McConfig::default()).unwrap();
        assert!(w.samples.iter().all(|s| s.weight == 1.0));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(DistillConfig { iterations: 0, ..DistillConfig::default() }.validate().is_err());
        assert!(DistillConfig { max_leaves: 0, ..DistillConfig::default() }.validate().is_err());
        DistillConfig { max_leaves: 1, ..DistillConfig::default() }.validate().unwrap();
        let e = DistillConfig { beta: vec![], ..DistillConfig::default() }.validate().unwrap_err();
        assert!(matches!(e, Error::Config { path, .. } if path == "beta"));
    }
}
