//! Agents: the Bayes-optimal mixture policy, the informed policy, and
//! explore-then-exploit baselines, plus the episode simulation loop.
//!
//! Every agent is a pure function of the observed history (and, for
//! exploration phases, of the episode's random stream): given the same seed
//! and history it always produces the same action distribution. Agents carry
//! no hidden mutable state; sampling happens in [`run_episode`].

use std::sync::Arc;

use rand::Rng;
use rand::RngCore;

use crate::discount::DiscountSequence;
use crate::env::{Action, ChronologicalEnvironment, DynEnv, History, Percept};
use crate::mixture::{mixture_env, posterior_weights, ClassError, WeightedClass};
use crate::models::{MdpEnv, MdpSpec};
use crate::value::{
    discounted_optimal_action, optimal_action, ChronologicalPolicy, PlanError,
};

/// Planning mode shared by the planner-backed agents.
#[derive(Debug, Clone)]
pub enum PlanMode {
    Finite { horizon: usize },
    Discounted { discount: DiscountSequence, eps: f64 },
}

/// The planner's arg-max action on `env` at the history's current cycle.
pub fn plan_action(
    env: &dyn ChronologicalEnvironment,
    mode: &PlanMode,
    history: &History,
) -> Result<Action, PlanError> {
    match mode {
        PlanMode::Finite { horizon } => optimal_action(env, history.cycle(), *horizon, history),
        PlanMode::Discounted { discount, eps } => {
            discounted_optimal_action(env, history.cycle(), discount, *eps, history)
        }
    }
}

fn point_mass(action: Action, n_actions: usize) -> Vec<f64> {
    let mut dist = vec![0.0; n_actions];
    dist[action.0] = 1.0;
    dist
}

/// Policy that knows the true environment and plans on it directly.
#[derive(Clone)]
pub struct InformedPolicy {
    pub env: DynEnv,
    pub mode: PlanMode,
}

impl InformedPolicy {
    pub fn new(env: DynEnv, mode: PlanMode) -> Self {
        Self { env, mode }
    }
}

impl ChronologicalPolicy for InformedPolicy {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>, PlanError> {
        let action = plan_action(self.env.as_ref(), &self.mode, history)?;
        Ok(point_mass(action, self.env.alphabet().actions()))
    }
}

/// The Bayes-optimal policy: replans every cycle on the class mixture
/// conditioned on the realized history.
#[derive(Clone)]
pub struct BayesPolicy {
    class: WeightedClass,
    mixture: DynEnv,
    mode: PlanMode,
}

impl BayesPolicy {
    pub fn new(class: &WeightedClass, mode: PlanMode) -> Self {
        Self {
            class: class.clone(),
            mixture: mixture_env(class),
            mode,
        }
    }

    pub fn class(&self) -> &WeightedClass {
        &self.class
    }

    pub fn mode(&self) -> &PlanMode {
        &self.mode
    }
}

impl ChronologicalPolicy for BayesPolicy {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>, PlanError> {
        let action = plan_action(self.mixture.as_ref(), &self.mode, history)?;
        Ok(point_mass(action, self.class.alphabet().actions()))
    }
}

/// Stateful convenience wrapper around [`BayesPolicy`]: tracks the realized
/// history so callers can interleave acting and observing. The agent's state
/// after `k` cycles is a pure function of the observed history.
pub struct BayesAgent {
    policy: BayesPolicy,
    history: History,
}

impl BayesAgent {
    pub fn new(class: &WeightedClass, mode: PlanMode) -> Self {
        Self {
            policy: BayesPolicy::new(class, mode),
            history: History::empty(),
        }
    }

    /// The mixture-optimal action at the current cycle.
    pub fn act(&self) -> Result<Action, PlanError> {
        plan_action(self.policy.mixture.as_ref(), &self.policy.mode, &self.history)
    }

    pub fn observe(&mut self, action: Action, percept: Percept) {
        self.history = self.history.extended(action, percept);
    }

    /// Posterior weights over the class given everything observed so far.
    pub fn posterior(&self) -> Result<Vec<f64>, ClassError> {
        posterior_weights(&self.policy.class, &self.history)
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn policy(&self) -> &BayesPolicy {
        &self.policy
    }
}

/// Transition and reward tallies for frequency estimation.
#[derive(Debug, Clone)]
pub struct TransitionCounts {
    states: usize,
    actions: usize,
    visits: Vec<u64>,
    reward_sums: Vec<f64>,
}

impl TransitionCounts {
    pub fn new(states: usize, actions: usize) -> Self {
        let size = states * actions * states;
        Self {
            states,
            actions,
            visits: vec![0; size],
            reward_sums: vec![0.0; size],
        }
    }

    #[inline]
    fn index(&self, action: usize, state: usize, next: usize) -> usize {
        (action * self.states + state) * self.states + next
    }

    pub fn observe(&mut self, state: usize, action: Action, next: usize, reward: f64) {
        let i = self.index(action.0, state, next);
        self.visits[i] += 1;
        self.reward_sums[i] += reward;
    }

    pub fn visits(&self, action: usize, state: usize, next: usize) -> u64 {
        self.visits[self.index(action, state, next)]
    }

    /// Tally the transitions of a history whose observations are state
    /// indices, starting from `initial_state`.
    pub fn from_history(
        steps: &[(Action, Percept)],
        initial_state: usize,
        states: usize,
        actions: usize,
    ) -> Result<Self, PlanError> {
        let mut counts = Self::new(states, actions);
        let mut state = initial_state;
        for (cycle, (action, percept)) in steps.iter().enumerate() {
            if percept.observation >= states || action.0 >= actions {
                return Err(PlanError::NonMdpHistory { cycle: cycle + 1 });
            }
            counts.observe(state, *action, percept.observation, percept.reward);
            state = percept.observation;
        }
        Ok(counts)
    }
}

/// Round a count vector to a probability row on the dyadic 2^-52 grid: the
/// entries are exact doubles whose float sum is exactly 1.0.
fn dyadic_row(counts: &[u64]) -> Vec<f64> {
    const SCALE: u64 = 1 << 52;
    let total: u64 = counts.iter().sum();
    let uniform = vec![1u64; counts.len()];
    let weights = if total == 0 { &uniform } else { counts };
    let denom: u128 = weights.iter().map(|&c| c as u128).sum();
    let mut numerators: Vec<u64> = weights
        .iter()
        .map(|&c| ((c as u128 * SCALE as u128 + denom / 2) / denom) as u64)
        .collect();
    let assigned: i128 = numerators.iter().map(|&n| n as i128).sum();
    let residue = SCALE as i128 - assigned;
    let argmax = numerators
        .iter()
        .enumerate()
        .max_by_key(|(_, &n)| n)
        .map(|(i, _)| i)
        .unwrap();
    numerators[argmax] = (numerators[argmax] as i128 + residue) as u64;
    numerators
        .iter()
        .map(|&n| n as f64 / SCALE as f64)
        .collect()
}

/// Frequency estimate of the transition tensor with empirical-mean rewards.
/// Unvisited `(state, action)` rows fall back to the uniform distribution,
/// unvisited triples to the midpoint reward `r_max / 2`. Every estimated row
/// sums to exactly 1.
pub fn estimate_transition(counts: &TransitionCounts, r_max: f64) -> MdpSpec {
    let states = counts.states;
    let actions = counts.actions;
    let mut transitions = vec![vec![Vec::new(); states]; actions];
    let mut rewards = vec![vec![vec![0.0; states]; states]; actions];
    for a in 0..actions {
        for s in 0..states {
            let row: Vec<u64> = (0..states).map(|n| counts.visits(a, s, n)).collect();
            transitions[a][s] = dyadic_row(&row);
            for next in 0..states {
                let i = counts.index(a, s, next);
                rewards[a][s][next] = if counts.visits[i] > 0 {
                    (counts.reward_sums[i] / counts.visits[i] as f64).clamp(0.0, r_max)
                } else {
                    r_max / 2.0
                };
            }
        }
    }
    MdpSpec {
        states,
        actions,
        transitions,
        rewards,
        initial_state: 0,
    }
}

/// Exploration cutoff `ceil(m^(2/3))`, computed in integer arithmetic.
pub fn exploration_cutoff(m: usize) -> usize {
    let target = (m as u128).pow(2);
    let mut k = 1u128;
    while k * k * k < target {
        k += 1;
    }
    k as usize
}

/// `ceil(sqrt(k))` in integer arithmetic.
pub fn ceil_sqrt(k: usize) -> usize {
    let mut d = 0u128;
    while d * d < k as u128 {
        d += 1;
    }
    d as usize
}

/// Explore-then-exploit agent for a finite lifespan `m`: uniformly random
/// actions in cycles `1..k0` with `k0 = ceil(m^(2/3))`, then exact
/// finite-horizon planning on the transition-frequency estimate built from
/// those first `k0 - 1` cycles (the estimate stays frozen afterwards).
#[derive(Clone)]
pub struct EteAgent {
    pub horizon: usize,
    pub cutoff: usize,
    states: usize,
    actions: usize,
    initial_state: usize,
    r_max: f64,
}

impl EteAgent {
    pub fn new(horizon: usize, states: usize, actions: usize, initial_state: usize, r_max: f64) -> Self {
        Self {
            horizon,
            cutoff: exploration_cutoff(horizon),
            states,
            actions,
            initial_state,
            r_max,
        }
    }

    fn estimate_env(&self, steps: &[(Action, Percept)]) -> Result<MdpEnv, PlanError> {
        let counts =
            TransitionCounts::from_history(steps, self.initial_state, self.states, self.actions)?;
        let spec = estimate_transition(&counts, self.r_max);
        Ok(MdpEnv::new(spec, self.r_max).expect("estimates are valid by construction"))
    }
}

impl ChronologicalPolicy for EteAgent {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>, PlanError> {
        let cycle = history.cycle();
        if cycle > self.horizon {
            return Err(PlanError::HorizonOrder {
                k: cycle,
                m: self.horizon,
            });
        }
        if cycle < self.cutoff {
            return Ok(vec![1.0 / self.actions as f64; self.actions]);
        }
        let env = self.estimate_env(&history.steps()[..self.cutoff - 1])?;
        let action = optimal_action(&env, cycle, self.horizon, history)?;
        Ok(point_mass(action, self.actions))
    }
}

/// Discounted explore-then-exploit agent: starting at cycle `k` it explores
/// uniformly for `delta(k) = ceil(sqrt(k))` cycles, then plans each cycle on
/// its current frequency estimate with the discounted planner. The window
/// length grows without bound, yet slowly enough that the discount mass it
/// claims vanishes when the tail ratio tends to one.
#[derive(Clone)]
pub struct DiscountedEteAgent {
    pub discount: DiscountSequence,
    pub eps: f64,
    pub start_cycle: usize,
    states: usize,
    actions: usize,
    initial_state: usize,
    r_max: f64,
}

impl DiscountedEteAgent {
    pub fn new(
        discount: DiscountSequence,
        eps: f64,
        start_cycle: usize,
        states: usize,
        actions: usize,
        initial_state: usize,
        r_max: f64,
    ) -> Self {
        if let DiscountSequence::Geometric { gamma } = discount {
            // Legal to run, but the effective horizon stays bounded, so the
            // exploration schedule cannot pay off asymptotically.
            log::warn!("discounted explore-then-exploit with geometric discount {gamma}: bounded effective horizon");
        }
        Self {
            discount,
            eps,
            start_cycle,
            states,
            actions,
            initial_state,
            r_max,
        }
    }

    /// Exploration window length at the agent's start cycle.
    pub fn window(&self) -> usize {
        ceil_sqrt(self.start_cycle)
    }
}

impl ChronologicalPolicy for DiscountedEteAgent {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>, PlanError> {
        let cycle = history.cycle();
        if cycle < self.start_cycle {
            return Err(PlanError::BeforeStart {
                cycle,
                start: self.start_cycle,
            });
        }
        if cycle < self.start_cycle + self.window() {
            return Ok(vec![1.0 / self.actions as f64; self.actions]);
        }
        let counts = TransitionCounts::from_history(
            history.steps(),
            self.initial_state,
            self.states,
            self.actions,
        )?;
        let spec = estimate_transition(&counts, self.r_max);
        let env = MdpEnv::new(spec, self.r_max).expect("estimates are valid by construction");
        let action = discounted_optimal_action(&env, cycle, &self.discount, self.eps, history)?;
        Ok(point_mass(action, self.actions))
    }
}

/// Sample an action from a distribution with a single uniform draw.
pub fn sample_action(dist: &[f64], rng: &mut dyn RngCore) -> Result<Action, PlanError> {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (a, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = Some(Action(a));
        }
        cumulative += p;
        if u < cumulative {
            return Ok(Action(a));
        }
    }
    last_positive.ok_or(PlanError::BadDistribution { cycle: 0 })
}

/// Drive a policy against an environment for `cycles` steps. Returns the
/// realized trajectory and reward sum; reproducible per seed.
pub fn run_episode(
    env: &dyn ChronologicalEnvironment,
    policy: &dyn ChronologicalPolicy,
    cycles: usize,
    rng: &mut dyn RngCore,
) -> Result<(History, f64), PlanError> {
    let mut history = History::empty();
    let mut total = 0.0;
    for _ in 0..cycles {
        let dist = policy.action_distribution(&history)?;
        let action = sample_action(&dist, rng)?;
        let percept = env.sample(&history, action, rng)?;
        total += percept.reward;
        history.push(action, percept);
    }
    Ok((history, total))
}
