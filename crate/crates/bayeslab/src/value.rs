//! Exact value computation and expectimax planning.
//!
//! Values are exact expectations of reward sums computed by depth-first
//! recursion over percept branches, maximizing over actions where a planner is
//! asked for the optimal choice. Two engines back the public operations:
//!
//! * a generic recursion over raw histories, valid for any chronological
//!   environment;
//! * a collapsed recursion used when the environment supplies a planning
//!   model ([`crate::env::CollapsedModel`]): nodes that share the last
//!   observation and the transition counts accumulated since the planning
//!   root have identical futures, so their subtree values are memoized once.
//!   This is what makes long-horizon planning on Markov models and their
//!   mixtures tractable.
//!
//! Both engines prune branches whose one-step probability is exactly zero and
//! break arg-max ties toward the lowest action index.

use std::collections::HashMap;

use thiserror::Error;

use crate::discount::DiscountSequence;
use crate::env::{
    slot_of, Action, Alphabet, ChronologicalEnvironment, CollapsedModel, EnvError, History,
    Percept,
};

/// Default cap on exhaustive policy enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("history is before cycle {history_cycle} but the planner was asked for cycle {k}")]
    CycleMismatch { history_cycle: usize, k: usize },
    #[error("cycle {k} is past horizon {m}")]
    HorizonOrder { k: usize, m: usize },
    #[error("policy table covers {horizon} cycles but depth {depth} was reached")]
    IncompletePolicy { depth: usize, horizon: usize },
    #[error("policy returned a malformed action distribution at cycle {cycle}")]
    BadDistribution { cycle: usize },
    #[error("{estimate:e} policies exceed the enumeration cap of {cap}")]
    EnumerationCap { estimate: f64, cap: u64 },
    #[error("discount tail is zero at cycle {cycle}")]
    ZeroTail { cycle: usize },
    #[error("truncation tolerance must be positive, got {eps}")]
    BadEpsilon { eps: f64 },
    #[error("history percept at cycle {cycle} is not a state index")]
    NonMdpHistory { cycle: usize },
    #[error("agent undefined before its start cycle {start} (asked at {cycle})")]
    BeforeStart { cycle: usize, start: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// A deterministic chronological policy, or a probabilistic one, seen through
/// its per-history action distribution. Exact evaluators integrate over this
/// distribution; simulators sample from it.
pub trait ChronologicalPolicy: Send + Sync {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>, PlanError>;
}

/// Uniform-random policy over a fixed number of actions.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl ChronologicalPolicy for UniformPolicy {
    fn action_distribution(&self, _history: &History) -> Result<Vec<f64>, PlanError> {
        Ok(vec![1.0 / self.n_actions as f64; self.n_actions])
    }
}

/// A total deterministic policy for cycles `1..=horizon`: one action per
/// percept history, indexed by depth and by the mixed-radix percept slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    n_actions: usize,
    n_percepts: usize,
    levels: Vec<Vec<Action>>,
}

impl PolicyTable {
    pub fn new(
        n_actions: usize,
        n_percepts: usize,
        levels: Vec<Vec<Action>>,
    ) -> Result<Self, PlanError> {
        let mut expected = 1usize;
        for (depth, level) in levels.iter().enumerate() {
            if level.len() != expected {
                return Err(PlanError::IncompletePolicy {
                    depth,
                    horizon: levels.len(),
                });
            }
            if level.iter().any(|a| a.0 >= n_actions) {
                return Err(PlanError::BadDistribution { cycle: depth + 1 });
            }
            expected = expected.saturating_mul(n_percepts);
        }
        Ok(Self {
            n_actions,
            n_percepts,
            levels,
        })
    }

    /// The same action at every history.
    pub fn constant(
        action: Action,
        n_actions: usize,
        n_percepts: usize,
        horizon: usize,
    ) -> Self {
        let mut levels = Vec::with_capacity(horizon);
        let mut width = 1usize;
        for _ in 0..horizon {
            levels.push(vec![action; width]);
            width *= n_percepts;
        }
        Self {
            n_actions,
            n_percepts,
            levels,
        }
    }

    pub fn horizon(&self) -> usize {
        self.levels.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_percepts(&self) -> usize {
        self.n_percepts
    }

    pub fn levels(&self) -> &[Vec<Action>] {
        &self.levels
    }

    pub fn action_at(&self, depth: usize, slot: usize) -> Result<Action, PlanError> {
        self.levels
            .get(depth)
            .and_then(|level| level.get(slot))
            .copied()
            .ok_or(PlanError::IncompletePolicy {
                depth,
                horizon: self.levels.len(),
            })
    }

    /// Percept-slot of a history under this table's radix.
    fn slot_of_history(&self, history: &History, alphabet: &Alphabet) -> Result<usize, PlanError> {
        let mut slot = 0usize;
        for percept in history.percepts() {
            let xi = alphabet
                .percept_index(percept)
                .ok_or(EnvError::UnknownPercept {
                    observation: percept.observation,
                    reward: percept.reward,
                })?;
            slot = slot * self.n_percepts + xi;
        }
        Ok(slot)
    }
}

/// A policy table together with the alphabet that decodes histories into its
/// slots.
pub struct TablePolicy<'a> {
    pub table: &'a PolicyTable,
    pub alphabet: &'a Alphabet,
}

impl ChronologicalPolicy for TablePolicy<'_> {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>, PlanError> {
        let slot = self.table.slot_of_history(history, self.alphabet)?;
        let action = self.table.action_at(history.len(), slot)?;
        let mut dist = vec![0.0; self.table.n_actions];
        dist[action.0] = 1.0;
        Ok(dist)
    }
}

/// How a reported value is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Plain expected reward sum over the planning window.
    RawSum,
    /// Discounted sum divided by the discount tail at the starting cycle.
    DiscountNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueReport {
    pub value: f64,
    pub normalization: Normalization,
    /// Last cycle the computation expanded.
    pub truncation_depth: usize,
    /// Bound on what the cycles beyond the truncation depth could add.
    pub truncation_error_bound: f64,
}

#[derive(Clone, Copy)]
enum Weighting<'a> {
    Uniform,
    Discounted(&'a DiscountSequence),
}

impl Weighting<'_> {
    #[inline]
    fn at(&self, cycle: usize) -> f64 {
        match self {
            Weighting::Uniform => 1.0,
            Weighting::Discounted(d) => d.gamma(cycle),
        }
    }
}

fn check_root(k: usize, history: &History) -> Result<(), PlanError> {
    if history.cycle() != k {
        return Err(PlanError::CycleMismatch {
            history_cycle: history.cycle(),
            k,
        });
    }
    Ok(())
}

/// Expected weighted reward sum of `policy` over cycles `k..=end`, by
/// recursion over the policy's action distribution and the environment's
/// percept branches.
fn eval_policy_recursive(
    env: &dyn ChronologicalEnvironment,
    policy: &dyn ChronologicalPolicy,
    history: &mut History,
    cycle: usize,
    end: usize,
    weighting: Weighting<'_>,
) -> Result<f64, PlanError> {
    if cycle > end {
        return Ok(0.0);
    }
    let dist = policy.action_distribution(history)?;
    let alphabet_len = env.alphabet().len();
    if dist.len() != env.alphabet().actions() || dist.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p))
    {
        return Err(PlanError::BadDistribution { cycle });
    }
    let gamma = weighting.at(cycle);
    let mut total = 0.0;
    for (a, &pa) in dist.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        let action = Action(a);
        let mut inner = 0.0;
        for xi in 0..alphabet_len {
            let p = env.prob_by_index(history, action, xi)?;
            if p == 0.0 {
                continue;
            }
            let percept = env.alphabet().percepts()[xi];
            history.push(action, percept);
            let below = eval_policy_recursive(env, policy, history, cycle + 1, end, weighting)?;
            history.pop();
            inner += p * (gamma * percept.reward + below);
        }
        total += pa * inner;
    }
    Ok(total)
}

/// Exact expected reward sum of a policy table over cycles `k..=m` from the
/// given history.
pub fn value_of_policy(
    env: &dyn ChronologicalEnvironment,
    table: &PolicyTable,
    k: usize,
    m: usize,
    history: &History,
) -> Result<ValueReport, PlanError> {
    check_root(k, history)?;
    if k > m + 1 {
        return Err(PlanError::HorizonOrder { k, m });
    }
    let policy = TablePolicy {
        table,
        alphabet: env.alphabet(),
    };
    let mut h = history.clone();
    let value = eval_policy_recursive(env, &policy, &mut h, k, m, Weighting::Uniform)?;
    Ok(ValueReport {
        value,
        normalization: Normalization::RawSum,
        truncation_depth: m,
        truncation_error_bound: 0.0,
    })
}

/// Generic expectimax over raw histories.
fn optimal_recursive(
    env: &dyn ChronologicalEnvironment,
    history: &mut History,
    cycle: usize,
    end: usize,
    weighting: Weighting<'_>,
) -> Result<f64, PlanError> {
    if cycle > end {
        return Ok(0.0);
    }
    let alphabet_len = env.alphabet().len();
    let gamma = weighting.at(cycle);
    let mut best = f64::NEG_INFINITY;
    for a in 0..env.alphabet().actions() {
        let action = Action(a);
        let mut sum = 0.0;
        for xi in 0..alphabet_len {
            let p = env.prob_by_index(history, action, xi)?;
            if p == 0.0 {
                continue;
            }
            let percept = env.alphabet().percepts()[xi];
            history.push(action, percept);
            let below = optimal_recursive(env, history, cycle + 1, end, weighting)?;
            history.pop();
            sum += p * (gamma * percept.reward + below);
        }
        if sum > best {
            best = sum;
        }
    }
    Ok(best)
}

/// Collapsed expectimax over (last observation, transition counts) nodes.
struct CollapsedPlanner<'a> {
    model: &'a CollapsedModel,
    percepts: &'a [Percept],
    n_actions: usize,
    n_percepts: usize,
    multi: bool,
    end: usize,
    weighting: Weighting<'a>,
    memo: HashMap<NodeKey, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct NodeKey {
    slot: u32,
    cycle: u32,
    counts: Option<Box<[u16]>>,
}

impl<'a> CollapsedPlanner<'a> {
    fn new(
        model: &'a CollapsedModel,
        alphabet: &'a Alphabet,
        end: usize,
        weighting: Weighting<'a>,
    ) -> Self {
        let view = &model.components[0];
        Self {
            model,
            percepts: alphabet.percepts(),
            n_actions: view.n_actions(),
            n_percepts: view.n_percepts(),
            multi: model.components.len() > 1,
            end,
            weighting,
            memo: HashMap::new(),
        }
    }

    fn cell(&self, slot: usize, action: usize, percept: usize) -> usize {
        (slot * self.n_actions + action) * self.n_percepts + percept
    }

    /// Posterior over components given transition counts since the root.
    fn weights(&self, counts: &[u16]) -> Vec<f64> {
        if !self.multi {
            return vec![1.0];
        }
        let mut log_terms = Vec::with_capacity(self.model.components.len());
        for (c, view) in self.model.components.iter().enumerate() {
            let mut log_term = self.model.log_weights[c];
            if log_term.is_finite() {
                for (cell, &n) in counts.iter().enumerate() {
                    if n > 0 {
                        log_term += n as f64 * view.log_prob_cell(cell);
                        if log_term == f64::NEG_INFINITY {
                            break;
                        }
                    }
                }
            }
            log_terms.push(log_term);
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = log_terms.iter().map(|t| (t - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        weights
    }

    fn best(&mut self, slot: usize, counts: &mut Vec<u16>, cycle: usize) -> (Option<Action>, f64) {
        let weights = self.weights(counts);
        let gamma = self.weighting.at(cycle);
        let mut best_action = None;
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.n_actions {
            let mut sum = 0.0;
            for xi in 0..self.n_percepts {
                let mut p = 0.0;
                for (w, view) in weights.iter().zip(self.model.components.iter()) {
                    if *w > 0.0 {
                        p += w * view.prob(slot, a, xi);
                    }
                }
                if p == 0.0 {
                    continue;
                }
                let percept = self.percepts[xi];
                let below = if cycle + 1 > self.end {
                    0.0
                } else {
                    let cell = self.cell(slot, a, xi);
                    counts[cell] += 1;
                    let v = self.value(1 + percept.observation, counts, cycle + 1);
                    counts[cell] -= 1;
                    v
                };
                sum += p * (gamma * percept.reward + below);
            }
            if sum > best {
                best = sum;
                best_action = Some(Action(a));
            }
        }
        (best_action, best)
    }

    fn value(&mut self, slot: usize, counts: &mut Vec<u16>, cycle: usize) -> f64 {
        let key = NodeKey {
            slot: slot as u32,
            cycle: cycle as u32,
            counts: self.multi.then(|| counts.clone().into_boxed_slice()),
        };
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let (_, v) = self.best(slot, counts, cycle);
        self.memo.insert(key, v);
        v
    }
}

fn optimal_decision(
    env: &dyn ChronologicalEnvironment,
    k: usize,
    end: usize,
    history: &History,
    weighting: Weighting<'_>,
) -> Result<(Action, f64), PlanError> {
    if let Some(model) = env.plan_model(history)? {
        let view = &model.components[0];
        let cells = view.n_slots() * view.n_actions() * view.n_percepts();
        let mut planner = CollapsedPlanner::new(&model, env.alphabet(), end, weighting);
        let mut counts = vec![0u16; cells];
        let (action, value) = planner.best(model.root_slot, &mut counts, k);
        return Ok((action.expect("environment has at least one action"), value));
    }
    // No collapsible structure: expectimax over raw histories.
    let mut best_action = None;
    let mut best = f64::NEG_INFINITY;
    let gamma = weighting.at(k);
    let mut h = history.clone();
    for a in 0..env.alphabet().actions() {
        let action = Action(a);
        let mut sum = 0.0;
        for xi in 0..env.alphabet().len() {
            let p = env.prob_by_index(&h, action, xi)?;
            if p == 0.0 {
                continue;
            }
            let percept = env.alphabet().percepts()[xi];
            h.push(action, percept);
            let below = optimal_recursive(env, &mut h, k + 1, end, weighting)?;
            h.pop();
            sum += p * (gamma * percept.reward + below);
        }
        if sum > best {
            best = sum;
            best_action = Some(action);
        }
    }
    Ok((best_action.expect("at least one action"), best))
}

/// Expectimax value over cycles `k..=m`: the maximum expected reward sum any
/// policy can achieve from the given history.
pub fn optimal_value(
    env: &dyn ChronologicalEnvironment,
    k: usize,
    m: usize,
    history: &History,
) -> Result<ValueReport, PlanError> {
    check_root(k, history)?;
    if k > m + 1 {
        return Err(PlanError::HorizonOrder { k, m });
    }
    let value = if k > m {
        0.0
    } else {
        optimal_decision(env, k, m, history, Weighting::Uniform)?.1
    };
    Ok(ValueReport {
        value,
        normalization: Normalization::RawSum,
        truncation_depth: m,
        truncation_error_bound: 0.0,
    })
}

/// The expectimax action at cycle `k`; ties break toward the lowest index.
pub fn optimal_action(
    env: &dyn ChronologicalEnvironment,
    k: usize,
    m: usize,
    history: &History,
) -> Result<Action, PlanError> {
    check_root(k, history)?;
    if k > m {
        return Err(PlanError::HorizonOrder { k, m });
    }
    Ok(optimal_decision(env, k, m, history, Weighting::Uniform)?.0)
}

/// Smallest cycle `m_t >= k` such that the reward mass past `m_t` is at most
/// `eps` of the normalized value: `r_max * Gamma_{m_t + 1} / Gamma_k <= eps`.
pub fn truncation_depth(
    d: &DiscountSequence,
    k: usize,
    eps: f64,
    r_max: f64,
) -> Result<usize, PlanError> {
    if eps <= 0.0 {
        return Err(PlanError::BadEpsilon { eps });
    }
    let tail_k = d.gamma_tail(k);
    if tail_k <= 0.0 {
        return Err(PlanError::ZeroTail { cycle: k });
    }
    let mut m_t = k;
    while r_max * d.gamma_tail(m_t + 1) / tail_k > eps {
        m_t += 1;
    }
    Ok(m_t)
}

/// Discounted, tail-normalized value of a (possibly probabilistic) policy:
/// the exact expectation of the truncated weighted reward sum, divided by
/// `Gamma_k`. The reported value is within `eps` of the untruncated one.
pub fn discounted_value_of_policy(
    env: &dyn ChronologicalEnvironment,
    policy: &dyn ChronologicalPolicy,
    k: usize,
    d: &DiscountSequence,
    eps: f64,
    history: &History,
) -> Result<ValueReport, PlanError> {
    check_root(k, history)?;
    let m_t = truncation_depth(d, k, eps, env.r_max())?;
    let tail_k = d.gamma_tail(k);
    let mut h = history.clone();
    let raw = eval_policy_recursive(env, policy, &mut h, k, m_t, Weighting::Discounted(d))?;
    Ok(ValueReport {
        value: raw / tail_k,
        normalization: Normalization::DiscountNormalized,
        truncation_depth: m_t,
        truncation_error_bound: env.r_max() * d.gamma_tail(m_t + 1) / tail_k,
    })
}

/// Discounted, tail-normalized expectimax value over the `eps`-truncated
/// depth.
pub fn discounted_optimal_value(
    env: &dyn ChronologicalEnvironment,
    k: usize,
    d: &DiscountSequence,
    eps: f64,
    history: &History,
) -> Result<ValueReport, PlanError> {
    check_root(k, history)?;
    let m_t = truncation_depth(d, k, eps, env.r_max())?;
    let tail_k = d.gamma_tail(k);
    let raw = optimal_decision(env, k, m_t, history, Weighting::Discounted(d))?.1;
    Ok(ValueReport {
        value: raw / tail_k,
        normalization: Normalization::DiscountNormalized,
        truncation_depth: m_t,
        truncation_error_bound: env.r_max() * d.gamma_tail(m_t + 1) / tail_k,
    })
}

/// Discounted expectimax action at cycle `k`, over the `eps`-truncated depth.
pub fn discounted_optimal_action(
    env: &dyn ChronologicalEnvironment,
    k: usize,
    d: &DiscountSequence,
    eps: f64,
    history: &History,
) -> Result<Action, PlanError> {
    check_root(k, history)?;
    let m_t = truncation_depth(d, k, eps, env.r_max())?;
    Ok(optimal_decision(env, k, m_t, history, Weighting::Discounted(d))?.0)
}

/// Exhaustive stream of every deterministic chronological policy for the given
/// alphabet sizes and horizon.
pub struct PolicyEnumeration {
    n_actions: usize,
    n_percepts: usize,
    digits: Vec<usize>,
    level_sizes: Vec<usize>,
    done: bool,
}

impl PolicyEnumeration {
    /// Exact number of policies, if it fits in a u128.
    pub fn count(n_actions: usize, n_percepts: usize, horizon: usize) -> Option<u128> {
        let mut slots = 0u32;
        let mut width = 1u128;
        for _ in 0..horizon {
            slots = slots.checked_add(u32::try_from(width).ok()?)?;
            width = width.checked_mul(n_percepts as u128)?;
        }
        (n_actions as u128).checked_pow(slots)
    }

    fn count_estimate(n_actions: usize, n_percepts: usize, horizon: usize) -> f64 {
        let mut slots = 0f64;
        let mut width = 1f64;
        for _ in 0..horizon {
            slots += width;
            width *= n_percepts as f64;
        }
        (slots * (n_actions as f64).ln()).exp()
    }
}

/// Yields every deterministic policy table exactly once, refusing up front
/// when the count exceeds `cap`.
pub fn enumerate_policies(
    n_actions: usize,
    n_percepts: usize,
    horizon: usize,
    cap: u64,
) -> Result<PolicyEnumeration, PlanError> {
    let estimate = PolicyEnumeration::count_estimate(n_actions, n_percepts, horizon);
    let within = match PolicyEnumeration::count(n_actions, n_percepts, horizon) {
        Some(count) => count <= cap as u128,
        None => false,
    };
    if !within {
        return Err(PlanError::EnumerationCap { estimate, cap });
    }
    let mut level_sizes = Vec::with_capacity(horizon);
    let mut width = 1usize;
    for _ in 0..horizon {
        level_sizes.push(width);
        width *= n_percepts;
    }
    let slots: usize = level_sizes.iter().sum();
    Ok(PolicyEnumeration {
        n_actions,
        n_percepts,
        digits: vec![0; slots],
        level_sizes,
        done: false,
    })
}

impl Iterator for PolicyEnumeration {
    type Item = PolicyTable;

    fn next(&mut self) -> Option<PolicyTable> {
        if self.done {
            return None;
        }
        let mut levels = Vec::with_capacity(self.level_sizes.len());
        let mut offset = 0;
        for &size in &self.level_sizes {
            levels.push(
                self.digits[offset..offset + size]
                    .iter()
                    .map(|&d| Action(d))
                    .collect(),
            );
            offset += size;
        }
        // Mixed-radix increment, base n_actions.
        let mut i = 0;
        loop {
            if i == self.digits.len() {
                self.done = true;
                break;
            }
            self.digits[i] += 1;
            if self.digits[i] < self.n_actions {
                break;
            }
            self.digits[i] = 0;
            i += 1;
        }
        Some(PolicyTable {
            n_actions: self.n_actions,
            n_percepts: self.n_percepts,
            levels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discount::DiscountSequence;
    use crate::env::Alphabet;
    use crate::mixture::{mixture_env, WeightedClass};
    use crate::models::{bandit_env, BanditSpec, EnvSpec, IidSpec, MdpSpec};
    use crate::rng::substream;
    use rand::Rng;

    /// Environment that pays reward 1 on every cycle.
    fn always_one() -> crate::env::DynEnv {
        crate::models::mdp_env(
            MdpSpec {
                states: 1,
                actions: 1,
                transitions: vec![vec![vec![1.0]]],
                rewards: vec![vec![vec![1.0]]],
                initial_state: 0,
            },
            1.0,
        )
        .unwrap()
    }

    /// Test-only non-Markov environment: pays 1 deterministically on the first
    /// cycle, then 0 forever. Exercises the raw-history planner path.
    struct FirstCyclePay {
        alphabet: Alphabet,
    }

    impl FirstCyclePay {
        fn new() -> Self {
            Self {
                alphabet: Alphabet::new(1, vec![Percept::new(0, 0.0), Percept::new(0, 1.0)]),
            }
        }
    }

    impl ChronologicalEnvironment for FirstCyclePay {
        fn alphabet(&self) -> &Alphabet {
            &self.alphabet
        }

        fn r_max(&self) -> f64 {
            1.0
        }

        fn prob_by_index(
            &self,
            history: &History,
            _action: Action,
            percept_index: usize,
        ) -> Result<f64, EnvError> {
            let pays = history.is_empty();
            Ok(match (pays, percept_index) {
                (true, 1) | (false, 0) => 1.0,
                _ => 0.0,
            })
        }
    }

    #[test]
    fn constant_reward_sums_over_window() {
        let env = always_one();
        let table = PolicyTable::constant(Action(0), 1, 1, 3);
        let v = value_of_policy(env.as_ref(), &table, 1, 3, &History::empty()).unwrap();
        assert_eq!(v.value, 3.0);
    }

    #[test]
    fn single_arm_two_cycles() {
        let env = bandit_env(&[0.7]).unwrap();
        let table = PolicyTable::constant(Action(0), 1, 2, 2);
        let v = value_of_policy(env.as_ref(), &table, 1, 2, &History::empty()).unwrap();
        assert!((v.value - 1.4).abs() < 1e-12);
    }

    #[test]
    fn deterministic_arms_split_by_policy() {
        let env = bandit_env(&[1.0, 0.0]).unwrap();
        let always0 = PolicyTable::constant(Action(0), 2, 2, 2);
        let always1 = PolicyTable::constant(Action(1), 2, 2, 2);
        let h = History::empty();
        assert_eq!(
            value_of_policy(env.as_ref(), &always0, 1, 2, &h).unwrap().value,
            2.0
        );
        assert_eq!(
            value_of_policy(env.as_ref(), &always1, 1, 2, &h).unwrap().value,
            0.0
        );
    }

    #[test]
    fn short_table_is_incomplete() {
        let env = bandit_env(&[0.5]).unwrap();
        let table = PolicyTable::constant(Action(0), 1, 2, 2);
        let err = value_of_policy(env.as_ref(), &table, 1, 3, &History::empty()).unwrap_err();
        assert!(matches!(err, PlanError::IncompletePolicy { .. }));
    }

    #[test]
    fn optimal_value_on_known_bandits() {
        let env = bandit_env(&[1.0, 0.0]).unwrap();
        let v = optimal_value(env.as_ref(), 1, 3, &History::empty()).unwrap();
        assert_eq!(v.value, 3.0);

        let env = bandit_env(&[0.3, 0.8]).unwrap();
        let v = optimal_value(env.as_ref(), 1, 1, &History::empty()).unwrap();
        assert!((v.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn optimal_action_tie_break_and_hand_cases() {
        let env = bandit_env(&[0.4, 0.4]).unwrap();
        assert_eq!(
            optimal_action(env.as_ref(), 1, 2, &History::empty()).unwrap(),
            Action(0)
        );

        let env = bandit_env(&[0.3, 0.8]).unwrap();
        assert_eq!(
            optimal_action(env.as_ref(), 1, 1, &History::empty()).unwrap(),
            Action(1)
        );
    }

    #[test]
    fn mixture_of_deterministic_bandits_prefers_heavier_member() {
        // Arm 0 pays under the 0.8-weight member, arm 1 under the other.
        let class = WeightedClass::from_specs(
            &[
                EnvSpec::Bandit(BanditSpec {
                    arms: vec![1.0, 0.0],
                }),
                EnvSpec::Bandit(BanditSpec {
                    arms: vec![0.0, 1.0],
                }),
            ],
            vec![0.8, 0.2],
            1.0,
        )
        .unwrap();
        let mix = mixture_env(&class);
        assert_eq!(
            optimal_action(mix.as_ref(), 1, 1, &History::empty()).unwrap(),
            Action(0)
        );
    }

    /// Brute-force oracle: best value over every enumerated policy, each
    /// evaluated by the exact policy evaluator.
    fn enumeration_best(
        env: &dyn ChronologicalEnvironment,
        m: usize,
    ) -> (PolicyTable, f64) {
        let mut best: Option<(PolicyTable, f64)> = None;
        for table in enumerate_policies(
            env.alphabet().actions(),
            env.alphabet().len(),
            m,
            DEFAULT_ENUMERATION_CAP,
        )
        .unwrap()
        {
            let v = value_of_policy(env, &table, 1, m, &History::empty())
                .unwrap()
                .value;
            if best.as_ref().map_or(true, |(_, b)| v > *b) {
                best = Some((table, v));
            }
        }
        best.unwrap()
    }

    fn random_mdp(states: usize, actions: usize, rng: &mut impl Rng) -> MdpSpec {
        // Rewards depend on the next state only, keeping the percept alphabet
        // at `states` entries.
        let reward_of: Vec<f64> = (0..states).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for _ in 0..actions {
            let mut t_rows = Vec::new();
            let mut r_rows = Vec::new();
            for _ in 0..states {
                let raw: Vec<f64> = (0..states).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                t_rows.push(raw.into_iter().map(|v| v / total).collect());
                r_rows.push(reward_of.clone());
            }
            transitions.push(t_rows);
            rewards.push(r_rows);
        }
        MdpSpec {
            states,
            actions,
            transitions,
            rewards,
            initial_state: 0,
        }
    }

    #[test]
    fn expectimax_matches_enumeration_oracle() {
        let mut rng = substream(11, &[0]);
        for _ in 0..50 {
            let states = rng.gen_range(2..=3);
            let actions = rng.gen_range(2..=3);
            let m = rng.gen_range(1..=3);
            let env = crate::models::mdp_env(random_mdp(states, actions, &mut rng), 1.0).unwrap();
            let (_, oracle) = enumeration_best(env.as_ref(), m);
            let planner = optimal_value(env.as_ref(), 1, m, &History::empty())
                .unwrap()
                .value;
            assert!(
                (planner - oracle).abs() <= 1e-9,
                "planner {planner} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn expectimax_dominates_every_policy() {
        let mut rng = substream(12, &[0]);
        let env = crate::models::mdp_env(random_mdp(2, 2, &mut rng), 1.0).unwrap();
        let m = 3;
        let v_star = optimal_value(env.as_ref(), 1, m, &History::empty())
            .unwrap()
            .value;
        for table in enumerate_policies(2, 2, m, DEFAULT_ENUMERATION_CAP).unwrap() {
            let v = value_of_policy(env.as_ref(), &table, 1, m, &History::empty())
                .unwrap()
                .value;
            assert!(v <= v_star + 1e-9);
        }
    }

    #[test]
    fn value_is_linear_and_optimal_value_convex_in_the_mixture() {
        let mut rng = substream(13, &[0]);
        for _ in 0..20 {
            let n_env = rng.gen_range(2..=3);
            let arms: Vec<Vec<f64>> = (0..n_env)
                .map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let raw: Vec<f64> = (0..n_env).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let specs: Vec<EnvSpec> = arms
                .iter()
                .map(|a| EnvSpec::Bandit(BanditSpec { arms: a.clone() }))
                .collect();
            let class = WeightedClass::from_specs(&specs, weights.clone(), 1.0).unwrap();
            let mix = mixture_env(&class);
            let m = 2;

            for table in enumerate_policies(2, 2, m, 64).unwrap().take(10) {
                let v_mix = value_of_policy(mix.as_ref(), &table, 1, m, &History::empty())
                    .unwrap()
                    .value;
                let v_sum: f64 = class
                    .environments()
                    .iter()
                    .zip(weights.iter())
                    .map(|(env, w)| {
                        w * value_of_policy(env.as_ref(), &table, 1, m, &History::empty())
                            .unwrap()
                            .value
                    })
                    .sum();
                assert!((v_mix - v_sum).abs() <= 1e-9);
            }

            let v_star_mix = optimal_value(mix.as_ref(), 1, m, &History::empty())
                .unwrap()
                .value;
            let v_star_sum: f64 = class
                .environments()
                .iter()
                .zip(weights.iter())
                .map(|(env, w)| {
                    w * optimal_value(env.as_ref(), 1, m, &History::empty())
                        .unwrap()
                        .value
                })
                .sum();
            assert!(v_star_mix <= v_star_sum + 1e-9);
        }
    }

    #[test]
    fn horizon_growth_is_monotone() {
        let mut rng = substream(14, &[0]);
        let env = crate::models::mdp_env(random_mdp(3, 2, &mut rng), 1.0).unwrap();
        let mut previous = 0.0;
        for m in 1..=4 {
            let v = optimal_value(env.as_ref(), 1, m, &History::empty())
                .unwrap()
                .value;
            assert!(v + 1e-12 >= previous);
            previous = v;
        }
    }

    #[test]
    fn collapsed_and_generic_planners_agree() {
        // The same mixture planned twice: once with node merging through the
        // plan model, once by raw-history recursion on a wrapper that hides
        // the model.
        struct HideModel(crate::env::DynEnv);
        impl ChronologicalEnvironment for HideModel {
            fn alphabet(&self) -> &Alphabet {
                self.0.alphabet()
            }
            fn r_max(&self) -> f64 {
                self.0.r_max()
            }
            fn prob_by_index(
                &self,
                history: &History,
                action: Action,
                percept_index: usize,
            ) -> Result<f64, EnvError> {
                self.0.prob_by_index(history, action, percept_index)
            }
        }

        let class = WeightedClass::from_specs(
            &[
                EnvSpec::Bandit(BanditSpec {
                    arms: vec![0.9, 0.2],
                }),
                EnvSpec::Bandit(BanditSpec {
                    arms: vec![0.1, 0.7],
                }),
            ],
            vec![0.6, 0.4],
            1.0,
        )
        .unwrap();
        let mix = mixture_env(&class);
        let hidden = HideModel(mix.clone());

        let h = History::empty().extended(Action(0), Percept::new(0, 1.0));
        for m in 2..=6 {
            let fast = optimal_value(mix.as_ref(), 2, m, &h).unwrap().value;
            let slow = optimal_value(&hidden, 2, m, &h).unwrap().value;
            assert!((fast - slow).abs() < 1e-12, "m={m}: {fast} vs {slow}");
            assert_eq!(
                optimal_action(mix.as_ref(), 2, m, &h).unwrap(),
                optimal_action(&hidden, 2, m, &h).unwrap()
            );
        }
    }

    #[test]
    fn discounted_constant_reward_is_one() {
        let env = always_one();
        let policy = UniformPolicy { n_actions: 1 };
        for d in [
            DiscountSequence::geometric(0.5).unwrap(),
            DiscountSequence::Quadratic,
            DiscountSequence::finite(4).unwrap(),
        ] {
            let v = discounted_value_of_policy(
                env.as_ref(),
                &policy,
                1,
                &d,
                0.01,
                &History::empty(),
            )
            .unwrap();
            assert!((v.value - 1.0).abs() <= 0.01 + 1e-12, "{d}: {}", v.value);
        }
    }

    #[test]
    fn finite_discount_recovers_average_of_undiscounted_value() {
        let mut rng = substream(15, &[0]);
        for _ in 0..20 {
            let env = crate::models::mdp_env(random_mdp(2, 2, &mut rng), 1.0).unwrap();
            let m = rng.gen_range(1..=4);
            let d = DiscountSequence::finite(m).unwrap();
            let table = PolicyTable::constant(
                Action(rng.gen_range(0..2)),
                2,
                env.alphabet().len(),
                m,
            );
            let policy = TablePolicy {
                table: &table,
                alphabet: env.alphabet(),
            };
            let discounted = discounted_value_of_policy(
                env.as_ref(),
                &policy,
                1,
                &d,
                0.5,
                &History::empty(),
            )
            .unwrap();
            let finite = value_of_policy(env.as_ref(), &table, 1, m, &History::empty()).unwrap();
            // Same traversal, same floating operations: exact equality.
            assert_eq!(discounted.value, finite.value / m as f64);
        }
    }

    #[test]
    fn geometric_first_cycle_reward_discounts_to_half() {
        let env = FirstCyclePay::new();
        let d = DiscountSequence::geometric(0.5).unwrap();
        let policy = UniformPolicy { n_actions: 1 };
        let v = discounted_value_of_policy(&env, &policy, 1, &d, 1e-6, &History::empty())
            .unwrap();
        assert!((v.value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn truncation_error_obeys_tail_bound() {
        let mut rng = substream(16, &[0]);
        for _ in 0..20 {
            let env = crate::models::mdp_env(random_mdp(2, 2, &mut rng), 1.0).unwrap();
            let d = DiscountSequence::geometric(rng.gen_range(0.3..0.8)).unwrap();
            let policy = UniformPolicy { n_actions: 2 };
            let loose = discounted_value_of_policy(
                env.as_ref(),
                &policy,
                1,
                &d,
                0.2,
                &History::empty(),
            )
            .unwrap();
            let tight = discounted_value_of_policy(
                env.as_ref(),
                &policy,
                1,
                &d,
                1e-9,
                &History::empty(),
            )
            .unwrap();
            assert!((loose.value - tight.value).abs() <= loose.truncation_error_bound + 1e-12);
        }
    }

    #[test]
    fn discounted_action_basics() {
        // One state, action 0 pays 1, action 1 pays 0.
        let spec = MdpSpec {
            states: 1,
            actions: 2,
            transitions: vec![vec![vec![1.0]], vec![vec![1.0]]],
            rewards: vec![vec![vec![1.0]], vec![vec![0.0]]],
            initial_state: 0,
        };
        let env = crate::models::mdp_env(spec, 1.0).unwrap();
        for d in [
            DiscountSequence::geometric(0.7).unwrap(),
            DiscountSequence::Quadratic,
            DiscountSequence::finite(6).unwrap(),
        ] {
            assert_eq!(
                discounted_optimal_action(env.as_ref(), 1, &d, 0.1, &History::empty()).unwrap(),
                Action(0)
            );
        }

        // Identical actions: tie-break to action 0.
        let spec = MdpSpec {
            states: 1,
            actions: 2,
            transitions: vec![vec![vec![1.0]], vec![vec![1.0]]],
            rewards: vec![vec![vec![0.5]], vec![vec![0.5]]],
            initial_state: 0,
        };
        let env = crate::models::mdp_env(spec, 1.0).unwrap();
        let d = DiscountSequence::Quadratic;
        assert_eq!(
            discounted_optimal_action(env.as_ref(), 1, &d, 0.1, &History::empty()).unwrap(),
            Action(0)
        );
    }

    #[test]
    fn finite_discount_planner_agrees_with_finite_horizon_planner() {
        let mut rng = substream(17, &[0]);
        for _ in 0..10 {
            let env = crate::models::mdp_env(random_mdp(2, 2, &mut rng), 1.0).unwrap();
            let m = rng.gen_range(1..=4);
            let d = DiscountSequence::finite(m).unwrap();
            let a_fin = optimal_action(env.as_ref(), 1, m, &History::empty()).unwrap();
            let a_disc =
                discounted_optimal_action(env.as_ref(), 1, &d, 0.5, &History::empty()).unwrap();
            assert_eq!(a_fin, a_disc);
            let v_fin = optimal_value(env.as_ref(), 1, m, &History::empty()).unwrap();
            let v_disc =
                discounted_optimal_value(env.as_ref(), 1, &d, 0.5, &History::empty()).unwrap();
            assert_eq!(v_disc.value, v_fin.value / m as f64);
        }
    }

    #[test]
    fn discounted_optimum_dominates_policies_within_tolerance() {
        let env = bandit_env(&[0.3, 0.8]).unwrap();
        let d = DiscountSequence::geometric(0.6).unwrap();
        let eps = 0.05;
        let star = discounted_optimal_value(env.as_ref(), 1, &d, eps, &History::empty())
            .unwrap()
            .value;
        let uniform = UniformPolicy { n_actions: 2 };
        let v = discounted_value_of_policy(env.as_ref(), &uniform, 1, &d, eps, &History::empty())
            .unwrap()
            .value;
        assert!(star + 2.0 * eps >= v);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(PolicyEnumeration::count(2, 2, 2), Some(8));
        assert_eq!(PolicyEnumeration::count(2, 2, 3), Some(128));
        assert_eq!(PolicyEnumeration::count(1, 4, 5), Some(1));
        assert_eq!(
            enumerate_policies(2, 2, 2, DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .count(),
            8
        );
        assert_eq!(
            enumerate_policies(2, 2, 3, DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .count(),
            128
        );
        assert_eq!(enumerate_policies(1, 3, 4, 10).unwrap().count(), 1);
    }

    #[test]
    fn enumeration_is_exhaustive_and_distinct() {
        let tables: Vec<PolicyTable> =
            enumerate_policies(2, 2, 2, DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .collect();
        for (i, a) in tables.iter().enumerate() {
            for b in tables.iter().skip(i + 1) {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn enumeration_cap_refuses_with_estimate() {
        let err = enumerate_policies(3, 3, 3, DEFAULT_ENUMERATION_CAP).unwrap_err();
        match err {
            PlanError::EnumerationCap { estimate, cap } => {
                assert_eq!(cap, DEFAULT_ENUMERATION_CAP);
                assert!((estimate - 1_594_323.0).abs() < 1.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn iid_env_plans_like_its_best_percept() {
        let spec = IidSpec {
            probs: vec![0.25, 0.75],
            rewards: vec![0.0, 1.0],
            actions: 2,
        };
        let env = std::sync::Arc::new(crate::models::IidEnv::new(spec, 1.0).unwrap());
        let v = optimal_value(env.as_ref(), 1, 4, &History::empty()).unwrap();
        assert!((v.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_mismatch_is_rejected() {
        let env = bandit_env(&[0.5]).unwrap();
        let err = optimal_value(env.as_ref(), 2, 3, &History::empty()).unwrap_err();
        assert!(matches!(err, PlanError::CycleMismatch { .. }));
    }
}
