//! Concrete environment kinds: stationary MDPs, Bernoulli bandits, and i.i.d.
//! percept processes, plus the ergodicity check used by the convergence
//! experiments.
//!
//! An MDP's percept is `(next state, reward)` where the reward is a
//! deterministic function of the transition `(s, a, s')`; this keeps the
//! percept alphabet finite. Truly stochastic rewards can be encoded by
//! splitting states, which is not done here. Bernoulli bandits are therefore
//! modeled directly (constant observation, reward-carrying percepts) instead
//! of through a reward tensor.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    Action, Alphabet, ChronologicalEnvironment, DynEnv, EnvError, History, MarkovView, Percept,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("transition tensor must be [actions][states][states], got {detail}")]
    TensorShape { detail: String },
    #[error("transitions[{action}][{state}] sums to {sum}, expected 1")]
    TransitionRow { action: usize, state: usize, sum: f64 },
    #[error("transitions[{action}][{state}][{next}] = {value} outside [0, 1]")]
    TransitionEntry {
        action: usize,
        state: usize,
        next: usize,
        value: f64,
    },
    #[error("rewards[{action}][{state}][{next}] = {value} outside [0, {r_max}]")]
    RewardRange {
        action: usize,
        state: usize,
        next: usize,
        value: f64,
        r_max: f64,
    },
    #[error("initial state {initial} outside 0..{states}")]
    InitialState { initial: usize, states: usize },
    #[error("arms[{index}] = {value} outside [0, 1]")]
    ArmProbability { index: usize, value: f64 },
    #[error("bandit rewards reach 1 but r_max = {r_max}")]
    BanditRewardBound { r_max: f64 },
    #[error("probs sums to {sum}, expected 1")]
    ProbVector { sum: f64 },
    #[error("probs[{index}] = {value} outside [0, 1]")]
    ProbEntry { index: usize, value: f64 },
    #[error("probs has {probs} entries but rewards has {rewards}")]
    IidShape { probs: usize, rewards: usize },
    #[error("rewards[{index}] = {value} outside [0, {r_max}]")]
    IidRewardRange { index: usize, value: f64, r_max: f64 },
    #[error("environment needs at least one {what}")]
    Empty { what: &'static str },
    #[error("environment percept ({observation}, {reward}) missing from the shared alphabet")]
    AlphabetMissing { observation: usize, reward: f64 },
    #[error("environment has {own} actions but the shared alphabet has {shared}")]
    ActionMismatch { own: usize, shared: usize },
}

/// A stationary Markov decision process over state indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub states: usize,
    pub actions: usize,
    /// `transitions[a][s][s']`, each row a probability vector.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[a][s][s']` in `[0, r_max]`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial_state: usize,
}

impl MdpSpec {
    pub fn validate(&self, r_max: f64) -> Result<(), SpecError> {
        if self.states == 0 {
            return Err(SpecError::Empty { what: "state" });
        }
        if self.actions == 0 {
            return Err(SpecError::Empty { what: "action" });
        }
        for (tensor, name) in [(&self.transitions, "transitions"), (&self.rewards, "rewards")] {
            if tensor.len() != self.actions
                || tensor
                    .iter()
                    .any(|per_state| per_state.len() != self.states)
                || tensor
                    .iter()
                    .any(|per_state| per_state.iter().any(|row| row.len() != self.states))
            {
                return Err(SpecError::TensorShape {
                    detail: format!(
                        "{name} for {} actions over {} states",
                        self.actions, self.states
                    ),
                });
            }
        }
        for (a, per_state) in self.transitions.iter().enumerate() {
            for (s, row) in per_state.iter().enumerate() {
                for (next, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(SpecError::TransitionEntry {
                            action: a,
                            state: s,
                            next,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > crate::env::PROB_TOLERANCE {
                    return Err(SpecError::TransitionRow {
                        action: a,
                        state: s,
                        sum,
                    });
                }
            }
        }
        for (a, per_state) in self.rewards.iter().enumerate() {
            for (s, row) in per_state.iter().enumerate() {
                for (next, &r) in row.iter().enumerate() {
                    if !(0.0..=r_max).contains(&r) {
                        return Err(SpecError::RewardRange {
                            action: a,
                            state: s,
                            next,
                            value: r,
                            r_max,
                        });
                    }
                }
            }
        }
        if self.initial_state >= self.states {
            return Err(SpecError::InitialState {
                initial: self.initial_state,
                states: self.states,
            });
        }
        Ok(())
    }

    /// Every percept the MDP can emit: `(s', r[a][s][s'])` over all triples.
    pub fn own_percepts(&self) -> Vec<Percept> {
        let mut percepts = Vec::new();
        for a in 0..self.actions {
            for s in 0..self.states {
                for next in 0..self.states {
                    percepts.push(Percept::new(next, self.rewards[a][s][next]));
                }
            }
        }
        percepts.sort();
        percepts.dedup();
        percepts
    }
}

/// Whether some policy can visit every state infinitely often: true iff the
/// directed graph with an edge `s -> s'` whenever some action moves `s` to
/// `s'` with positive probability is strongly connected. Under the
/// uniform-random policy the induced chain's support is exactly this graph, so
/// strong connectivity suffices; without mutual reachability no policy can
/// keep returning everywhere.
pub fn check_ergodic(spec: &MdpSpec) -> bool {
    let n = spec.states;
    if n <= 1 {
        return true;
    }
    let edge = |s: usize, next: usize| {
        (0..spec.actions).any(|a| spec.transitions[a][s][next] > 0.0)
    };
    let reaches_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for next in 0..n {
                let connected = if forward { edge(s, next) } else { edge(next, s) };
                if connected && !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|v| v)
    };
    reaches_all(true) && reaches_all(false)
}

/// MDP as a chronological environment. The conditional depends only on the
/// last percept's observation (or the initial state for the empty history).
pub struct MdpEnv {
    spec: MdpSpec,
    r_max: f64,
    alphabet: Arc<Alphabet>,
}

impl MdpEnv {
    pub fn new(spec: MdpSpec, r_max: f64) -> Result<Self, SpecError> {
        spec.validate(r_max)?;
        let alphabet = Arc::new(Alphabet::new(spec.actions, spec.own_percepts()));
        Ok(Self {
            spec,
            r_max,
            alphabet,
        })
    }

    pub fn with_alphabet(
        spec: MdpSpec,
        r_max: f64,
        alphabet: Arc<Alphabet>,
    ) -> Result<Self, SpecError> {
        spec.validate(r_max)?;
        if alphabet.actions() != spec.actions {
            return Err(SpecError::ActionMismatch {
                own: spec.actions,
                shared: alphabet.actions(),
            });
        }
        for percept in spec.own_percepts() {
            if alphabet.percept_index(&percept).is_none() {
                return Err(SpecError::AlphabetMissing {
                    observation: percept.observation,
                    reward: percept.reward,
                });
            }
        }
        Ok(Self {
            spec,
            r_max,
            alphabet,
        })
    }

    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn state_after(&self, history: &History) -> Option<usize> {
        match history.last_percept() {
            None => Some(self.spec.initial_state),
            Some(p) if p.observation < self.spec.states => Some(p.observation),
            // Foreign prefix (possible under union alphabets): conditionals
            // after a zero-probability history are reported as zero.
            Some(_) => None,
        }
    }
}

impl ChronologicalEnvironment for MdpEnv {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn prob_by_index(
        &self,
        history: &History,
        action: Action,
        percept_index: usize,
    ) -> Result<f64, EnvError> {
        check_indices(&self.alphabet, action, percept_index)?;
        let Some(s) = self.state_after(history) else {
            return Ok(0.0);
        };
        let x = self.alphabet.percepts()[percept_index];
        if x.observation >= self.spec.states {
            return Ok(0.0);
        }
        let expected = self.spec.rewards[action.0][s][x.observation];
        if expected.to_bits() != x.reward.to_bits() {
            return Ok(0.0);
        }
        Ok(self.spec.transitions[action.0][s][x.observation])
    }

    fn markov_view(&self) -> Option<MarkovView> {
        let n_obs = self.alphabet.observation_count();
        let mut view = MarkovView::new(self.spec.actions, n_obs, self.alphabet.len());
        for slot in 0..=n_obs {
            let state = if slot == 0 {
                Some(self.spec.initial_state)
            } else if slot - 1 < self.spec.states {
                Some(slot - 1)
            } else {
                None
            };
            let Some(s) = state else { continue };
            for a in 0..self.spec.actions {
                for (xi, x) in self.alphabet.percepts().iter().enumerate() {
                    if x.observation < self.spec.states
                        && self.spec.rewards[a][s][x.observation].to_bits() == x.reward.to_bits()
                    {
                        view.set(slot, a, xi, self.spec.transitions[a][s][x.observation]);
                    }
                }
            }
        }
        Some(view)
    }
}

/// A multi-armed Bernoulli bandit: arm `i` pays reward 1 with probability
/// `p_i`, else 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSpec {
    pub arms: Vec<f64>,
}

impl BanditSpec {
    pub fn validate(&self, r_max: f64) -> Result<(), SpecError> {
        if self.arms.is_empty() {
            return Err(SpecError::Empty { what: "arm" });
        }
        for (index, &p) in self.arms.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(SpecError::ArmProbability { index, value: p });
            }
        }
        if r_max < 1.0 {
            return Err(SpecError::BanditRewardBound { r_max });
        }
        Ok(())
    }

    pub fn own_percepts(&self) -> Vec<Percept> {
        vec![Percept::new(0, 0.0), Percept::new(0, 1.0)]
    }
}

pub struct BanditEnv {
    arms: Vec<f64>,
    r_max: f64,
    alphabet: Arc<Alphabet>,
    loss_index: usize,
    win_index: usize,
}

impl BanditEnv {
    pub fn new(spec: BanditSpec, r_max: f64) -> Result<Self, SpecError> {
        let alphabet = Arc::new(Alphabet::new(spec.arms.len(), spec.own_percepts()));
        Self::with_alphabet(spec, r_max, alphabet)
    }

    pub fn with_alphabet(
        spec: BanditSpec,
        r_max: f64,
        alphabet: Arc<Alphabet>,
    ) -> Result<Self, SpecError> {
        spec.validate(r_max)?;
        if alphabet.actions() != spec.arms.len() {
            return Err(SpecError::ActionMismatch {
                own: spec.arms.len(),
                shared: alphabet.actions(),
            });
        }
        let loss = Percept::new(0, 0.0);
        let win = Percept::new(0, 1.0);
        let loss_index = alphabet
            .percept_index(&loss)
            .ok_or(SpecError::AlphabetMissing {
                observation: 0,
                reward: 0.0,
            })?;
        let win_index = alphabet
            .percept_index(&win)
            .ok_or(SpecError::AlphabetMissing {
                observation: 0,
                reward: 1.0,
            })?;
        Ok(Self {
            arms: spec.arms,
            r_max,
            alphabet,
            loss_index,
            win_index,
        })
    }

    pub fn arms(&self) -> &[f64] {
        &self.arms
    }
}

impl ChronologicalEnvironment for BanditEnv {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn prob_by_index(
        &self,
        _history: &History,
        action: Action,
        percept_index: usize,
    ) -> Result<f64, EnvError> {
        check_indices(&self.alphabet, action, percept_index)?;
        let p = self.arms[action.0];
        Ok(if percept_index == self.win_index {
            p
        } else if percept_index == self.loss_index {
            1.0 - p
        } else {
            0.0
        })
    }

    fn markov_view(&self) -> Option<MarkovView> {
        let n_obs = self.alphabet.observation_count();
        let mut view = MarkovView::new(self.arms.len(), n_obs, self.alphabet.len());
        for slot in 0..=n_obs {
            for (a, &p) in self.arms.iter().enumerate() {
                view.set(slot, a, self.win_index, p);
                view.set(slot, a, self.loss_index, 1.0 - p);
            }
        }
        Some(view)
    }
}

/// History- and action-independent percept process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidSpec {
    pub probs: Vec<f64>,
    pub rewards: Vec<f64>,
    #[serde(default = "default_one")]
    pub actions: usize,
}

fn default_one() -> usize {
    1
}

impl IidSpec {
    pub fn validate(&self, r_max: f64) -> Result<(), SpecError> {
        if self.probs.is_empty() {
            return Err(SpecError::Empty { what: "percept" });
        }
        if self.actions == 0 {
            return Err(SpecError::Empty { what: "action" });
        }
        if self.probs.len() != self.rewards.len() {
            return Err(SpecError::IidShape {
                probs: self.probs.len(),
                rewards: self.rewards.len(),
            });
        }
        for (index, &p) in self.probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(SpecError::ProbEntry { index, value: p });
            }
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > crate::env::PROB_TOLERANCE {
            return Err(SpecError::ProbVector { sum });
        }
        for (index, &r) in self.rewards.iter().enumerate() {
            if !(0.0..=r_max).contains(&r) {
                return Err(SpecError::IidRewardRange {
                    index,
                    value: r,
                    r_max,
                });
            }
        }
        Ok(())
    }

    /// Percept `i` is `(i, rewards[i])`.
    pub fn own_percepts(&self) -> Vec<Percept> {
        self.rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Percept::new(i, r))
            .collect()
    }
}

pub struct IidEnv {
    r_max: f64,
    alphabet: Arc<Alphabet>,
    /// Probability per shared-alphabet percept index.
    probs: Vec<f64>,
}

impl IidEnv {
    pub fn new(spec: IidSpec, r_max: f64) -> Result<Self, SpecError> {
        let alphabet = Arc::new(Alphabet::new(spec.actions, spec.own_percepts()));
        Self::with_alphabet(spec, r_max, alphabet)
    }

    pub fn with_alphabet(
        spec: IidSpec,
        r_max: f64,
        alphabet: Arc<Alphabet>,
    ) -> Result<Self, SpecError> {
        spec.validate(r_max)?;
        if alphabet.actions() != spec.actions {
            return Err(SpecError::ActionMismatch {
                own: spec.actions,
                shared: alphabet.actions(),
            });
        }
        let mut probs = vec![0.0; alphabet.len()];
        for (percept, &p) in spec.own_percepts().iter().zip(spec.probs.iter()) {
            let index =
                alphabet
                    .percept_index(percept)
                    .ok_or(SpecError::AlphabetMissing {
                        observation: percept.observation,
                        reward: percept.reward,
                    })?;
            probs[index] += p;
        }
        Ok(Self {
            r_max,
            alphabet,
            probs,
        })
    }
}

impl ChronologicalEnvironment for IidEnv {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn prob_by_index(
        &self,
        _history: &History,
        action: Action,
        percept_index: usize,
    ) -> Result<f64, EnvError> {
        check_indices(&self.alphabet, action, percept_index)?;
        Ok(self.probs[percept_index])
    }

    fn markov_view(&self) -> Option<MarkovView> {
        let n_obs = self.alphabet.observation_count();
        let mut view = MarkovView::new(self.alphabet.actions(), n_obs, self.alphabet.len());
        for slot in 0..=n_obs {
            for a in 0..self.alphabet.actions() {
                for (xi, &p) in self.probs.iter().enumerate() {
                    view.set(slot, a, xi, p);
                }
            }
        }
        Some(view)
    }
}

fn check_indices(alphabet: &Alphabet, action: Action, percept_index: usize) -> Result<(), EnvError> {
    if !alphabet.contains_action(action) {
        return Err(EnvError::UnknownAction {
            action: action.0,
            actions: alphabet.actions(),
        });
    }
    if percept_index >= alphabet.len() {
        return Err(EnvError::PerceptIndex {
            index: percept_index,
            len: alphabet.len(),
        });
    }
    Ok(())
}

/// Tagged environment description, as stored in class files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Mdp(MdpSpec),
    Bandit(BanditSpec),
    Iid(IidSpec),
}

impl EnvSpec {
    pub fn validate(&self, r_max: f64) -> Result<(), SpecError> {
        match self {
            EnvSpec::Mdp(spec) => spec.validate(r_max),
            EnvSpec::Bandit(spec) => spec.validate(r_max),
            EnvSpec::Iid(spec) => spec.validate(r_max),
        }
    }

    pub fn actions(&self) -> usize {
        match self {
            EnvSpec::Mdp(spec) => spec.actions,
            EnvSpec::Bandit(spec) => spec.arms.len(),
            EnvSpec::Iid(spec) => spec.actions,
        }
    }

    pub fn own_percepts(&self) -> Vec<Percept> {
        match self {
            EnvSpec::Mdp(spec) => spec.own_percepts(),
            EnvSpec::Bandit(spec) => spec.own_percepts(),
            EnvSpec::Iid(spec) => spec.own_percepts(),
        }
    }

    pub fn build(&self, r_max: f64, alphabet: Arc<Alphabet>) -> Result<DynEnv, SpecError> {
        Ok(match self {
            EnvSpec::Mdp(spec) => Arc::new(MdpEnv::with_alphabet(spec.clone(), r_max, alphabet)?),
            EnvSpec::Bandit(spec) => {
                Arc::new(BanditEnv::with_alphabet(spec.clone(), r_max, alphabet)?)
            }
            EnvSpec::Iid(spec) => Arc::new(IidEnv::with_alphabet(spec.clone(), r_max, alphabet)?),
        })
    }

    pub fn as_mdp(&self) -> Option<&MdpSpec> {
        match self {
            EnvSpec::Mdp(spec) => Some(spec),
            _ => None,
        }
    }
}

/// Convenience constructors used across tests and experiments.
pub fn mdp_env(spec: MdpSpec, r_max: f64) -> Result<DynEnv, SpecError> {
    Ok(Arc::new(MdpEnv::new(spec, r_max)?))
}

pub fn bandit_env(arms: &[f64]) -> Result<DynEnv, SpecError> {
    Ok(Arc::new(BanditEnv::new(
        BanditSpec {
            arms: arms.to_vec(),
        },
        1.0,
    )?))
}
