//! Environment and policy abstractions, rollouts and Monte-Carlo value
//! estimation.
//!
//! Value and Q estimates are produced by truncated rollouts of the teacher
//! from a restored environment snapshot, so any [`Policy`] works as a
//! teacher without exposing a value head.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::seed;

/// Observation handed to policies.
///
/// `features` is the only part policies and trees look at. `internal` carries
/// whatever the environment needs to restore itself to this exact point
/// (clocks, cursors); it is empty for states that cannot be restored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub internal: Vec<f64>,
}

impl State {
    pub fn new(features: Vec<f64>) -> Self {
        Self { features, internal: Vec::new() }
    }

    pub fn with_internal(features: Vec<f64>, internal: Vec<f64>) -> Self {
        Self { features, internal }
    }

    /// Bit pattern of the full state, usable as an exact cache key.
    pub fn key(&self) -> Vec<u64> {
        self.features
            .iter()
            .chain(std::iter::once(&f64::NAN))
            .chain(self.internal.iter())
            .map(|x| x.to_bits())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match *self {
            Action::Discrete(i) => Some(i),
            Action::Continuous(_) => None,
        }
    }

    /// Numeric value of the action (index for discrete actions).
    pub fn value(&self) -> f64 {
        match *self {
            Action::Discrete(i) => i as f64,
            Action::Continuous(x) => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous,
}

impl ActionSpace {
    pub fn validate(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(i)) if i < n => Ok(()),
            (ActionSpace::Discrete(n), Action::Discrete(i)) => {
                domain(format!("action {i} outside discrete space of size {n}"))
            }
            (ActionSpace::Continuous, Action::Continuous(x)) if x.is_finite() => Ok(()),
            _ => domain(format!("action {action:?} does not belong to {self:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: State,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Clone + Send + Sync {
    fn reset(&mut self, seed: u64) -> State;
    fn observe(&self) -> State;
    fn step(&mut self, action: Action) -> Result<Transition>;
    fn is_done(&self) -> bool;
    fn action_space(&self) -> ActionSpace;

    /// Put the environment at `state`; fails with
    /// [`Error::UnsupportedState`] when the state carries no usable snapshot.
    fn restore(&mut self, state: &State) -> Result<()>;

    /// True when transitions do not depend on any random stream.
    fn is_deterministic(&self) -> bool {
        true
    }

    /// Re-key the environment's random stream without moving its state.
    fn reseed(&mut self, _seed: u64) {}
}

pub trait Policy: Send + Sync {
    fn act(&self, state: &State) -> Action;

    fn action_distribution(&self, _state: &State) -> Option<Vec<f64>> {
        None
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, state: &State) -> Action {
        (**self).act(state)
    }

    fn action_distribution(&self, state: &State) -> Option<Vec<f64>> {
        (**self).action_distribution(state)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&self, state: &State) -> Action {
        (**self).act(state)
    }

    fn action_distribution(&self, state: &State) -> Option<Vec<f64>> {
        (**self).action_distribution(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: State,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub total_return: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn reward_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

pub fn discounted_sum(rewards: impl IntoIterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        domain(format!("gamma must lie in (0, 1], got {gamma}"))
    }
}

/// Reset `env` with `seed` and run `policy` for at most `max_steps` steps.
pub fn rollout<E: Environment, P: Policy + ?Sized>(
    env: &mut E,
    policy: &P,
    max_steps: usize,
    gamma: f64,
    seed: u64,
) -> Result<Trajectory> {
    if max_steps == 0 {
        return domain("max_steps must be at least 1");
    }
    check_gamma(gamma)?;
    let mut state = env.reset(seed);
    if env.is_done() {
        return Err(Error::EmptyTrajectory);
    }
    let mut steps = Vec::new();
    while steps.len() < max_steps && !env.is_done() {
        let action = policy.act(&state);
        let t = env.step(action)?;
        steps.push(Step { state, action, reward: t.reward });
        state = t.next;
    }
    let total_return = discounted_sum(steps.iter().map(|s| s.reward), gamma);
    Ok(Trajectory { steps, total_return, gamma, seed })
}

/// Truncated Monte-Carlo estimation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub horizon: usize,
    pub n_rollouts: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { horizon: 20, n_rollouts: 1, gamma: 0.99, seed: 0 }
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if self.horizon == 0 || self.n_rollouts == 0 {
            return domain("horizon and n_rollouts must be at least 1");
        }
        Ok(())
    }
}

/// Discounted return of `first` (or the teacher's action when `None`)
/// followed by the teacher, starting from a restored clone of `env`.
fn mc_return<E: Environment, P: Policy + ?Sized>(
    env: &E,
    teacher: &P,
    state: &State,
    first: Option<Action>,
    horizon: usize,
    gamma: f64,
    stream_seed: u64,
) -> Result<f64> {
    let mut sim = env.clone();
    sim.restore(state)?;
    sim.reseed(stream_seed);
    let mut current = state.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for k in 0..horizon {
        if sim.is_done() {
            break;
        }
        let action = match (k, first) {
            (0, Some(a)) => a,
            _ => teacher.act(&current),
        };
        let t = sim.step(action)?;
        total += discount * t.reward;
        discount *= gamma;
        current = t.next;
    }
    Ok(total)
}

fn mc_mean<E: Environment, P: Policy + ?Sized>(
    env: &E,
    teacher: &P,
    state: &State,
    first: Option<Action>,
    cfg: &McConfig,
) -> Result<f64> {
    let n = if env.is_deterministic() { 1 } else { cfg.n_rollouts };
    let mut sum = 0.0;
    for r in 0..n {
        sum += mc_return(env, teacher, state, first, cfg.horizon, cfg.gamma, seed::derive(cfg.seed, r as u64))?;
    }
    Ok(sum / n as f64)
}

/// Mean discounted return of following `teacher` for `horizon` steps from `state`.
pub fn estimate_value<E: Environment, P: Policy + ?Sized>(
    env: &E,
    teacher: &P,
    state: &State,
    cfg: &McConfig,
) -> Result<f64> {
    cfg.validate()?;
    mc_mean(env, teacher, state, None, cfg)
}

/// Return of taking `action` at `state`, then following `teacher` for the
/// remaining `horizon - 1` steps.
pub fn estimate_q<E: Environment, P: Policy + ?Sized>(
    env: &E,
    teacher: &P,
    state: &State,
    action: Action,
    cfg: &McConfig,
) -> Result<f64> {
    cfg.validate()?;
    env.action_space().validate(&action)?;
    mc_mean(env, teacher, state, Some(action), cfg)
}

/// Q estimates for every action of a discrete action space.
pub fn q_vector<E: Environment, P: Policy + ?Sized>(
    env: &E,
    teacher: &P,
    state: &State,
    cfg: &McConfig,
) -> Result<Vec<f64>> {
    let n = match env.action_space() {
        ActionSpace::Discrete(n) => n,
        ActionSpace::Continuous => return domain("Q vector requires a discrete action space"),
    };
    if n == 0 {
        return domain("empty action space");
    }
    (0..n).map(|a| estimate_q(env, teacher, state, Action::Discrete(a), cfg)).collect()
}

/// `V(s) - min_a Q(s, a)`: how much the worst action at `state` costs
/// relative to following the teacher.
pub fn advantage_weight<E: Environment, P: Policy + ?Sized>(
    env: &E,
    teacher: &P,
    state: &State,
    cfg: &McConfig,
) -> Result<f64> {
    let q = q_vector(env, teacher, state, cfg)?;
    let value = if env.is_deterministic() {
        match teacher.act(state) {
            Action::Discrete(a) if a < q.len() => q[a],
            other => return domain(format!("teacher produced invalid action {other:?}")),
        }
    } else {
        estimate_value(env, teacher, state, cfg)?
    };
    let min_q = q.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(value - min_q)
}

/// Advantage weights for a batch of states, evaluated in parallel; the
/// result order matches `states`.
pub fn advantage_weights<E: Environment, P: Policy + ?Sized>(
    env_of: impl Fn(usize) -> E + Sync,
    teacher: &P,
    states: &[(usize, &State)],
    cfg: &McConfig,
) -> Result<Vec<f64>> {
    states
        .par_iter()
        .map(|(src, s)| advantage_weight(&env_of(*src), teacher, s, cfg))
        .collect()
}
