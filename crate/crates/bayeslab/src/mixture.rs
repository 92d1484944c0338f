//! Weighted environment classes, the mixture environment, and posterior
//! bookkeeping.
//!
//! A class holds environments `nu` over shared alphabets with prior weights
//! `w_nu > 0` summing to one. The mixture environment's one-step conditional
//! given history `h` is the posterior-weighted average of the members'
//! conditionals, with posterior weights
//!
//! ```text
//! w_nu(h) = w_nu * nu(h) / sum_mu w_mu * mu(h)
//! ```
//!
//! Evidence terms are accumulated in log space so long histories cannot
//! underflow; members that assign probability zero to the realized history are
//! retained with log-evidence `-inf` (exactly zero posterior) so that indices
//! stay stable.

use std::sync::Arc;

use thiserror::Error;

use crate::env::{
    slot_of, Action, Alphabet, ChronologicalEnvironment, CollapsedModel, DynEnv, EnvError,
    History, MarkovView, Percept,
};
use crate::models::{EnvSpec, SpecError};

/// Tolerance on prior weights summing to one.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassError {
    #[error("environment class is empty")]
    Empty,
    #[error("weights[{index}] = {value} must be positive")]
    WeightNotPositive { index: usize, value: f64 },
    #[error("class has {environments} environments but {weights} weights")]
    WeightCount { environments: usize, weights: usize },
    #[error("weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("environment {index} does not share the class alphabet")]
    AlphabetMismatch { index: usize },
    #[error("environment {index} does not share r_max = {r_max}")]
    RewardBoundMismatch { index: usize, r_max: f64 },
    #[error("environment index {index} outside class of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// A finite environment class with prior weights.
#[derive(Clone)]
pub struct WeightedClass {
    environments: Vec<DynEnv>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    alphabet: Arc<Alphabet>,
    r_max: f64,
}

impl WeightedClass {
    /// Build a class from ready-made environments sharing alphabet and r_max.
    pub fn from_envs(environments: Vec<DynEnv>, weights: Vec<f64>) -> Result<Self, ClassError> {
        if environments.is_empty() {
            return Err(ClassError::Empty);
        }
        if environments.len() != weights.len() {
            return Err(ClassError::WeightCount {
                environments: environments.len(),
                weights: weights.len(),
            });
        }
        for (index, &w) in weights.iter().enumerate() {
            if !(w > 0.0) {
                return Err(ClassError::WeightNotPositive { index, value: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(ClassError::WeightSum { sum });
        }
        let alphabet = Arc::new(environments[0].alphabet().clone());
        let r_max = environments[0].r_max();
        for (index, env) in environments.iter().enumerate().skip(1) {
            if env.alphabet() != alphabet.as_ref() {
                return Err(ClassError::AlphabetMismatch { index });
            }
            if env.r_max() != r_max {
                return Err(ClassError::RewardBoundMismatch { index, r_max });
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            environments,
            weights,
            log_weights,
            alphabet,
            r_max,
        })
    }

    /// Build a class from specs, constructing every member over the union
    /// percept alphabet so that histories are interchangeable across members.
    pub fn from_specs(
        specs: &[EnvSpec],
        weights: Vec<f64>,
        r_max: f64,
    ) -> Result<Self, ClassError> {
        if specs.is_empty() {
            return Err(ClassError::Empty);
        }
        let actions = specs[0].actions();
        let mut percepts = Vec::new();
        for (index, spec) in specs.iter().enumerate() {
            spec.validate(r_max)?;
            if spec.actions() != actions {
                return Err(ClassError::AlphabetMismatch { index });
            }
            percepts.extend(spec.own_percepts());
        }
        let alphabet = Arc::new(Alphabet::new(actions, percepts));
        let environments = specs
            .iter()
            .map(|spec| spec.build(r_max, Arc::clone(&alphabet)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_envs(environments, weights)
    }

    pub fn len(&self) -> usize {
        self.environments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.environments.is_empty()
    }

    pub fn environment(&self, index: usize) -> Result<&DynEnv, ClassError> {
        self.environments.get(index).ok_or(ClassError::IndexOutOfRange {
            index,
            len: self.environments.len(),
        })
    }

    pub fn environments(&self) -> &[DynEnv] {
        &self.environments
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Per-member log-evidence `ln nu(h)` along a history (`-inf` when the
    /// member rules the history out).
    pub fn log_evidence(&self, history: &History) -> Result<Vec<f64>, EnvError> {
        let mut evidence = vec![0.0f64; self.environments.len()];
        let mut prefix = History::empty();
        for (y, x) in history.steps() {
            for (e, env) in self.environments.iter().enumerate() {
                if evidence[e].is_finite() {
                    let p = env.prob(&prefix, *y, x)?;
                    evidence[e] += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
                }
            }
            prefix.push(*y, *x);
        }
        Ok(evidence)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

fn normalized_weights(log_terms: &[f64]) -> Option<Vec<f64>> {
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let unnormalized: Vec<f64> = log_terms.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = unnormalized.iter().sum();
    Some(unnormalized.into_iter().map(|u| u / total).collect())
}

/// Posterior weights `w_nu(h)` over the class members given a history.
///
/// Errors when every member assigns probability zero to the history.
pub fn posterior_weights(class: &WeightedClass, history: &History) -> Result<Vec<f64>, ClassError> {
    let evidence = class.log_evidence(history)?;
    let log_terms: Vec<f64> = class
        .log_weights
        .iter()
        .zip(evidence.iter())
        .map(|(lw, le)| lw + le)
        .collect();
    normalized_weights(&log_terms).ok_or(EnvError::UndefinedConditional {
        cycle: history.cycle(),
    })
    .map_err(ClassError::from)
}

/// Running per-member log-evidence along a realized history.
///
/// Incremental counterpart of [`posterior_weights`]: updating with each
/// observed `(action, percept)` step reproduces the batch computation.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    history: History,
    log_evidence: Vec<f64>,
}

impl PosteriorState {
    pub fn prior(class: &WeightedClass) -> Self {
        Self {
            history: History::empty(),
            log_evidence: vec![0.0; class.len()],
        }
    }

    pub fn cycle(&self) -> usize {
        self.history.cycle()
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn log_evidence(&self) -> &[f64] {
        &self.log_evidence
    }

    /// Posterior weights recoverable from the state.
    pub fn weights(&self, class: &WeightedClass) -> Result<Vec<f64>, ClassError> {
        let log_terms: Vec<f64> = class
            .log_weights
            .iter()
            .zip(self.log_evidence.iter())
            .map(|(lw, le)| lw + le)
            .collect();
        normalized_weights(&log_terms).ok_or(
            EnvError::UndefinedConditional {
                cycle: self.cycle(),
            }
            .into(),
        )
    }
}

/// Extend a posterior state by one observed cycle.
pub fn update_posterior(
    state: &PosteriorState,
    class: &WeightedClass,
    action: Action,
    percept: Percept,
) -> Result<PosteriorState, ClassError> {
    let mut log_evidence = state.log_evidence.clone();
    for (e, env) in class.environments.iter().enumerate() {
        if log_evidence[e].is_finite() {
            let p = env.prob(&state.history, action, &percept)?;
            log_evidence[e] += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        }
    }
    Ok(PosteriorState {
        history: state.history.extended(action, percept),
        log_evidence,
    })
}

/// The likelihood ratio `z = xi(h) / mu(h)` between the mixture and the true
/// member. Along histories the true environment generates, its conditional
/// expectation can never rise: the negated process is a semi-martingale, which
/// is what keeps the true member's posterior weight away from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceRatio {
    pub value: f64,
    pub cycle: usize,
}

/// Evidence ratio of the mixture against member `true_index` on `history`.
pub fn evidence_ratio(
    class: &WeightedClass,
    true_index: usize,
    history: &History,
) -> Result<EvidenceRatio, ClassError> {
    if true_index >= class.len() {
        return Err(ClassError::IndexOutOfRange {
            index: true_index,
            len: class.len(),
        });
    }
    let evidence = class.log_evidence(history)?;
    let log_mu = evidence[true_index];
    if log_mu == f64::NEG_INFINITY {
        return Err(EnvError::UndefinedConditional {
            cycle: history.cycle(),
        }
        .into());
    }
    let log_terms: Vec<f64> = class
        .log_weights
        .iter()
        .zip(evidence.iter())
        .map(|(lw, le)| lw + le)
        .collect();
    let log_xi = log_sum_exp(&log_terms);
    Ok(EvidenceRatio {
        value: (log_xi - log_mu).exp(),
        cycle: history.cycle(),
    })
}

/// Exact conditional expectation of the next evidence ratio under the true
/// member: the sum over percepts with positive true-member probability of
/// `mu(x | h, y) * z(h + (y, x))`.
pub fn conditional_z_expectation(
    class: &WeightedClass,
    true_index: usize,
    history: &History,
    action: Action,
) -> Result<f64, ClassError> {
    let mu = class.environment(true_index)?.clone();
    let mut expectation = 0.0;
    for (xi, percept) in class.alphabet.percepts().iter().enumerate() {
        let p = mu.prob_by_index(history, action, xi)?;
        if p > 0.0 {
            let next = history.extended(action, *percept);
            expectation += p * evidence_ratio(class, true_index, &next)?.value;
        }
    }
    Ok(expectation)
}

/// The Bayes mixture of a class, itself a chronological environment.
pub struct MixtureEnv {
    class: WeightedClass,
    views: Option<Vec<MarkovView>>,
}

impl MixtureEnv {
    pub fn new(class: &WeightedClass) -> Self {
        let views = class
            .environments
            .iter()
            .map(|env| env.markov_view())
            .collect::<Option<Vec<_>>>();
        Self {
            class: class.clone(),
            views,
        }
    }

    pub fn class(&self) -> &WeightedClass {
        &self.class
    }
}

impl ChronologicalEnvironment for MixtureEnv {
    fn alphabet(&self) -> &Alphabet {
        &self.class.alphabet
    }

    fn r_max(&self) -> f64 {
        self.class.r_max
    }

    fn prob_by_index(
        &self,
        history: &History,
        action: Action,
        percept_index: usize,
    ) -> Result<f64, EnvError> {
        let evidence = self.class.log_evidence(history)?;
        let log_terms: Vec<f64> = self
            .class
            .log_weights
            .iter()
            .zip(evidence.iter())
            .map(|(lw, le)| lw + le)
            .collect();
        let weights =
            normalized_weights(&log_terms).ok_or(EnvError::UndefinedConditional {
                cycle: history.cycle(),
            })?;
        let mut p = 0.0;
        for (w, env) in weights.iter().zip(self.class.environments.iter()) {
            if *w > 0.0 {
                p += w * env.prob_by_index(history, action, percept_index)?;
            } else {
                // Still surface index errors from skipped members.
                env.prob_by_index(history, action, percept_index)?;
            }
        }
        Ok(p)
    }

    // A mixture of Markov environments is generally not Markov itself,
    // so no one-step view is exposed.
    fn markov_view(&self) -> Option<MarkovView> {
        None
    }

    /// Planning model: when every member is Markov, the mixture's future from
    /// `root` is fully determined by the root posterior and the last
    /// observation, which is what planners exploit to merge nodes.
    fn plan_model(&self, root: &History) -> Result<Option<CollapsedModel>, EnvError> {
        let Some(views) = &self.views else {
            return Ok(None);
        };
        let evidence = self.class.log_evidence(root)?;
        let log_weights: Vec<f64> = self
            .class
            .log_weights
            .iter()
            .zip(evidence.iter())
            .map(|(lw, le)| lw + le)
            .collect();
        if log_weights.iter().all(|lw| *lw == f64::NEG_INFINITY) {
            return Err(EnvError::UndefinedConditional {
                cycle: root.cycle(),
            });
        }
        Ok(Some(CollapsedModel {
            components: views.clone(),
            log_weights,
            root_slot: slot_of(root),
        }))
    }
}

/// The mixture of a class as a shareable environment handle.
pub fn mixture_env(class: &WeightedClass) -> DynEnv {
    Arc::new(MixtureEnv::new(class))
}
