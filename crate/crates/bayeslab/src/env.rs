//! Histories, percepts, and the chronological-environment interface.
//!
//! A *chronological environment* assigns a conditional probability to the next
//! percept given the complete alternating action/percept history so far. No
//! Markov assumption is built into the interface; concrete Markov models live
//! in [`crate::models`]. Percept and action alphabets are finite, rewards are
//! bounded by `r_max`, and every conditional distribution must sum to one over
//! the percept alphabet (within [`PROB_TOLERANCE`]).
//!
//! Environments and histories are immutable values: extending a history
//! returns a new one, and evaluation is safe from many threads. Sampling takes
//! an explicit random stream; there is no hidden global state.

use std::sync::Arc;

use rand::Rng;
use rand::RngCore;
use thiserror::Error;

/// Tolerance for conditional distributions summing to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// An action: an index into the environment's finite action alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action(pub usize);

impl Action {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A percept: an observation index paired with a bounded reward.
///
/// Rewards take finitely many values per environment, so the percept alphabet
/// stays finite. Equality compares rewards by bit pattern; alphabets are built
/// from the same tables that produce history percepts, so equal rewards are
/// bit-identical.
#[derive(Debug, Clone, Copy)]
pub struct Percept {
    pub observation: usize,
    pub reward: f64,
}

impl Percept {
    pub fn new(observation: usize, reward: f64) -> Self {
        Self {
            observation,
            reward,
        }
    }
}

impl PartialEq for Percept {
    fn eq(&self, other: &Self) -> bool {
        self.observation == other.observation && self.reward.to_bits() == other.reward.to_bits()
    }
}

impl Eq for Percept {}

impl PartialOrd for Percept {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Percept {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.observation
            .cmp(&other.observation)
            .then(self.reward.total_cmp(&other.reward))
    }
}

/// The finite action and percept alphabets shared by an environment (or by
/// every member of an environment class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    actions: usize,
    percepts: Vec<Percept>,
}

impl Alphabet {
    pub fn new(actions: usize, mut percepts: Vec<Percept>) -> Self {
        percepts.sort();
        percepts.dedup();
        assert!(actions > 0, "alphabet needs at least one action");
        assert!(!percepts.is_empty(), "alphabet needs at least one percept");
        Self { actions, percepts }
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn percepts(&self) -> &[Percept] {
        &self.percepts
    }

    pub fn len(&self) -> usize {
        self.percepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.percepts.is_empty()
    }

    /// Number of distinct observation values (max index + 1).
    pub fn observation_count(&self) -> usize {
        self.percepts
            .iter()
            .map(|p| p.observation + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn percept_index(&self, percept: &Percept) -> Option<usize> {
        self.percepts.iter().position(|p| p == percept)
    }

    pub fn contains_action(&self, action: Action) -> bool {
        action.0 < self.actions
    }
}

/// An alternating action/percept history; length `k - 1` means "before cycle
/// `k`". Extension yields a new value, so histories can be shared freely.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    steps: Vec<(Action, Percept)>,
}

impl History {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_steps(steps: Vec<(Action, Percept)>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The cycle index about to be played: `len + 1`.
    pub fn cycle(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn steps(&self) -> &[(Action, Percept)] {
        &self.steps
    }

    pub fn last_percept(&self) -> Option<&Percept> {
        self.steps.last().map(|(_, x)| x)
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.steps.iter().map(|(y, _)| *y)
    }

    pub fn percepts(&self) -> impl Iterator<Item = &Percept> + '_ {
        self.steps.iter().map(|(_, x)| x)
    }

    /// Realized reward sum along the history.
    pub fn reward_sum(&self) -> f64 {
        self.steps.iter().map(|(_, x)| x.reward).sum()
    }

    #[must_use]
    pub fn extended(&self, action: Action, percept: Percept) -> Self {
        let mut steps = self.steps.clone();
        steps.push((action, percept));
        Self { steps }
    }

    // In-place extension for recursion internals; public API stays immutable.
    pub(crate) fn push(&mut self, action: Action, percept: Percept) {
        self.steps.push((action, percept));
    }

    pub(crate) fn pop(&mut self) {
        self.steps.pop();
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action} outside alphabet of {actions} actions")]
    UnknownAction { action: usize, actions: usize },
    #[error("percept ({observation}, {reward}) not in the environment alphabet")]
    UnknownPercept { observation: usize, reward: f64 },
    #[error("percept index {index} outside alphabet of {len} percepts")]
    PerceptIndex { index: usize, len: usize },
    #[error("{actions} actions but {percepts} percepts in sequence")]
    LengthMismatch { actions: usize, percepts: usize },
    #[error("conditional undefined: history has probability zero (cycle {cycle})")]
    UndefinedConditional { cycle: usize },
}

/// One-step transition table of a Markov environment, expressed over a shared
/// percept alphabet. `slot` 0 conditions on the initial situation (empty
/// history); slot `1 + s` conditions on last observation `s`.
///
/// Planners use these views to merge equivalent planning nodes; the view must
/// reproduce exactly what the environment's conditional probabilities say.
#[derive(Debug, Clone)]
pub struct MarkovView {
    n_actions: usize,
    n_slots: usize,
    n_percepts: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl MarkovView {
    pub fn new(n_actions: usize, n_observations: usize, n_percepts: usize) -> Self {
        let n_slots = n_observations + 1;
        let size = n_slots * n_actions * n_percepts;
        Self {
            n_actions,
            n_slots,
            n_percepts,
            probs: vec![0.0; size],
            log_probs: vec![f64::NEG_INFINITY; size],
        }
    }

    #[inline]
    fn idx(&self, slot: usize, action: usize, percept: usize) -> usize {
        (slot * self.n_actions + action) * self.n_percepts + percept
    }

    pub fn set(&mut self, slot: usize, action: usize, percept: usize, p: f64) {
        let i = self.idx(slot, action, percept);
        self.probs[i] = p;
        self.log_probs[i] = if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    }

    #[inline]
    pub fn prob(&self, slot: usize, action: usize, percept: usize) -> f64 {
        self.probs[self.idx(slot, action, percept)]
    }

    #[inline]
    pub fn log_prob(&self, slot: usize, action: usize, percept: usize) -> f64 {
        self.log_probs[self.idx(slot, action, percept)]
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_percepts(&self) -> usize {
        self.n_percepts
    }
}

/// Planning-time model: a weighted set of Markov components conditioned on the
/// planning root. For a single known environment the weight vector is trivial;
/// for a mixture it carries the (unnormalized) posterior log-weights at the
/// root history.
#[derive(Debug, Clone)]
pub struct CollapsedModel {
    pub components: Vec<MarkovView>,
    pub log_weights: Vec<f64>,
    pub root_slot: usize,
}

impl CollapsedModel {
    pub fn single(view: MarkovView, root: &History) -> Self {
        Self {
            components: vec![view],
            log_weights: vec![0.0],
            root_slot: slot_of(root),
        }
    }
}

/// Memoization slot for a history: 0 for the empty history, `1 + s` for last
/// observation `s`.
pub fn slot_of(history: &History) -> usize {
    history
        .last_percept()
        .map(|p| 1 + p.observation)
        .unwrap_or(0)
}

/// A conditional probability assigner over percepts, one cycle at a time.
///
/// Implementations must be normalized: for every history reachable with
/// positive probability and every action, the probabilities over the full
/// percept alphabet sum to one within [`PROB_TOLERANCE`]. Conditioning on a
/// history the environment itself rules out returns probability zero.
pub trait ChronologicalEnvironment: Send + Sync {
    fn alphabet(&self) -> &Alphabet;

    fn r_max(&self) -> f64;

    /// Probability of the percept at `percept_index` following `history` and
    /// `action`.
    fn prob_by_index(
        &self,
        history: &History,
        action: Action,
        percept_index: usize,
    ) -> Result<f64, EnvError>;

    /// Probability of an explicit percept; errors if the percept or action is
    /// not part of the alphabet.
    fn prob(&self, history: &History, action: Action, percept: &Percept) -> Result<f64, EnvError> {
        let alphabet = self.alphabet();
        if !alphabet.contains_action(action) {
            return Err(EnvError::UnknownAction {
                action: action.0,
                actions: alphabet.actions(),
            });
        }
        let index = alphabet
            .percept_index(percept)
            .ok_or(EnvError::UnknownPercept {
                observation: percept.observation,
                reward: percept.reward,
            })?;
        self.prob_by_index(history, action, index)
    }

    /// Sample the next percept. Deterministic for a fixed seed and call
    /// sequence.
    fn sample(
        &self,
        history: &History,
        action: Action,
        rng: &mut dyn RngCore,
    ) -> Result<Percept, EnvError> {
        let alphabet = self.alphabet();
        if !alphabet.contains_action(action) {
            return Err(EnvError::UnknownAction {
                action: action.0,
                actions: alphabet.actions(),
            });
        }
        let u: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut last_positive = None;
        for (i, percept) in alphabet.percepts().iter().enumerate() {
            let p = self.prob_by_index(history, action, i)?;
            if p > 0.0 {
                last_positive = Some(*percept);
            }
            cumulative += p;
            if u < cumulative {
                return Ok(*percept);
            }
        }
        // Float slop in the cumulative sum; fall back to the last supported percept.
        last_positive.ok_or(EnvError::UndefinedConditional {
            cycle: history.cycle(),
        })
    }

    /// Probability of a percept block under an action block: the product of
    /// one-step conditionals along the extended history. Empty blocks have
    /// probability one.
    fn seq_prob(
        &self,
        history: &History,
        actions: &[Action],
        percepts: &[Percept],
    ) -> Result<f64, EnvError> {
        if actions.len() != percepts.len() {
            return Err(EnvError::LengthMismatch {
                actions: actions.len(),
                percepts: percepts.len(),
            });
        }
        let mut h = history.clone();
        let mut product = 1.0;
        for (y, x) in actions.iter().zip(percepts.iter()) {
            product *= self.prob(&h, *y, x)?;
            h.push(*y, *x);
        }
        Ok(product)
    }

    /// One-step table when the environment is Markov in its last observation.
    fn markov_view(&self) -> Option<MarkovView> {
        None
    }

    /// Planning model rooted at `root`; `None` means planners must recurse
    /// over raw histories.
    fn plan_model(&self, root: &History) -> Result<Option<CollapsedModel>, EnvError> {
        Ok(self
            .markov_view()
            .map(|view| CollapsedModel::single(view, root)))
    }
}

/// Shared handle to a chronological environment.
pub type DynEnv = Arc<dyn ChronologicalEnvironment>;
