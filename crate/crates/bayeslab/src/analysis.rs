//! Empirical certification of the optimality properties: Pareto and balanced
//! Pareto checks by exhaustive policy enumeration, value-difference bounds,
//! martingale monitoring of the evidence ratio, and convergence experiments
//! for the learning agents.

use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::discount::DiscountSequence;
use crate::env::{Action, Alphabet, EnvError, History, Percept};
use crate::mixture::{conditional_z_expectation, evidence_ratio, ClassError, WeightedClass};
use crate::models::{check_ergodic, EnvSpec, MdpSpec, SpecError};
use crate::policy::{
    run_episode, sample_action, BayesPolicy, DiscountedEteAgent, EteAgent, PlanMode,
};
use crate::rng::substream;
use crate::value::{
    enumerate_policies, optimal_value, value_of_policy, ChronologicalPolicy, PlanError,
    PolicyTable, TablePolicy,
};

/// Strictness threshold separating "equal value" from "strictly greater".
pub const DOMINANCE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("class member {index} is not ergodic")]
    NonErgodic { index: usize },
    #[error("policy extraction needs {slots} table slots, over the cap of {cap}")]
    ExtractionCap { slots: f64, cap: u64 },
    #[error("realized history has probability zero under the true environment at cycle {cycle}")]
    ZeroProbabilityHistory { cycle: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

impl From<EnvError> for AnalysisError {
    fn from(e: EnvError) -> Self {
        AnalysisError::Plan(PlanError::Env(e))
    }
}

/// Per-environment values of a policy table, from the empty history.
fn values_per_env(
    class: &WeightedClass,
    table: &PolicyTable,
    m: usize,
) -> Result<Vec<f64>, PlanError> {
    class
        .environments()
        .iter()
        .map(|env| Ok(value_of_policy(env.as_ref(), table, 1, m, &History::empty())?.value))
        .collect()
}

fn weighted_value(class: &WeightedClass, values: &[f64]) -> f64 {
    class
        .weights()
        .iter()
        .zip(values.iter())
        .map(|(w, v)| w * v)
        .sum()
}

/// A rival that dominates the subject: at least as good everywhere, strictly
/// better somewhere.
#[derive(Debug, Clone)]
pub struct ParetoWitness {
    pub policy: PolicyTable,
    pub values: Vec<f64>,
    pub rival_index: usize,
}

#[derive(Debug, Clone)]
pub struct ParetoVerdict {
    pub subject_values: Vec<f64>,
    pub dominated: bool,
    pub witness: Option<ParetoWitness>,
}

fn dominates(rival: &[f64], subject: &[f64]) -> bool {
    let everywhere = rival
        .iter()
        .zip(subject.iter())
        .all(|(r, s)| *r >= s - DOMINANCE_EPS);
    let somewhere = rival
        .iter()
        .zip(subject.iter())
        .any(|(r, s)| *r > s + DOMINANCE_EPS);
    everywhere && somewhere
}

/// Exhaustively compare `subject` against every deterministic policy of the
/// class alphabet at horizon `m`. When dominators exist, the witness is the
/// one with the greatest prior-weighted value.
pub fn pareto_check(
    class: &WeightedClass,
    subject: &PolicyTable,
    m: usize,
    cap: u64,
) -> Result<ParetoVerdict, AnalysisError> {
    let subject_values = values_per_env(class, subject, m)?;
    let mut witness: Option<ParetoWitness> = None;
    let mut witness_weighted = f64::NEG_INFINITY;
    for (rival_index, rival) in enumerate_policies(
        class.alphabet().actions(),
        class.alphabet().len(),
        m,
        cap,
    )?
    .enumerate()
    {
        let values = values_per_env(class, &rival, m)?;
        if dominates(&values, &subject_values) {
            let weighted = weighted_value(class, &values);
            if weighted > witness_weighted {
                witness_weighted = weighted;
                witness = Some(ParetoWitness {
                    policy: rival,
                    values,
                    rival_index,
                });
            }
        }
    }
    Ok(ParetoVerdict {
        subject_values,
        dominated: witness.is_some(),
        witness,
    })
}

/// Weighted win/loss accounting of a rival against the subject policy.
///
/// `delta_by_env[i] = V_i(subject) - V_i(rival)`; the loss set collects the
/// environments where the rival does worse, the gain set the rest. By
/// construction `delta = delta_loss - delta_gain`.
#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub delta_by_env: Vec<f64>,
    pub delta: f64,
    pub delta_loss: f64,
    pub delta_gain: f64,
    pub loss_set: Vec<usize>,
    pub gain_set: Vec<usize>,
}

impl BalanceReport {
    /// The balance property: any weighted gain over the subject is paid for by
    /// an at least as large weighted loss.
    pub fn balanced(&self) -> bool {
        self.delta >= -DOMINANCE_EPS && self.delta_gain <= self.delta_loss + DOMINANCE_EPS
    }
}

/// Exact per-environment value differences between the subject policy and a
/// rival at horizon `m`.
pub fn balanced_delta(
    class: &WeightedClass,
    subject: &PolicyTable,
    rival: &PolicyTable,
    m: usize,
) -> Result<BalanceReport, AnalysisError> {
    let subject_values = values_per_env(class, subject, m)?;
    let rival_values = values_per_env(class, rival, m)?;
    let delta_by_env: Vec<f64> = subject_values
        .iter()
        .zip(rival_values.iter())
        .map(|(s, r)| s - r)
        .collect();
    let mut delta_loss = 0.0;
    let mut delta_gain = 0.0;
    let mut loss_set = Vec::new();
    let mut gain_set = Vec::new();
    for (i, (&d, &w)) in delta_by_env.iter().zip(class.weights().iter()).enumerate() {
        if d > 0.0 {
            delta_loss += w * d;
            loss_set.push(i);
        } else {
            delta_gain += w * (-d);
            gain_set.push(i);
        }
    }
    Ok(BalanceReport {
        delta_by_env,
        delta: delta_loss - delta_gain,
        delta_loss,
        delta_gain,
        loss_set,
        gain_set,
    })
}

/// One row of a gap table: how far a subject falls short of the informed
/// optimum in one environment, in per-cycle units.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub horizon: usize,
    pub env_index: usize,
    pub optimal_avg: f64,
    pub subject_avg: f64,
    pub gap: f64,
    /// Weighted-difference bound on the gap, where one applies.
    pub bound: Option<f64>,
    /// Standard error of `subject_avg` when it is a Monte Carlo mean.
    pub std_err: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GapTable {
    pub rows: Vec<GapRow>,
}

/// Extract the deterministic policy table a policy induces up to horizon `m`,
/// feeding the policy its own actions along every percept branch.
pub fn extract_policy_table(
    policy: &dyn ChronologicalPolicy,
    alphabet: &Alphabet,
    m: usize,
    cap: u64,
) -> Result<PolicyTable, AnalysisError> {
    let n_percepts = alphabet.len();
    let mut slots = 0f64;
    let mut width_f = 1f64;
    for _ in 0..m {
        slots += width_f;
        width_f *= n_percepts as f64;
    }
    if slots > cap as f64 {
        return Err(AnalysisError::ExtractionCap { slots, cap });
    }

    let mut levels: Vec<Vec<Action>> = Vec::with_capacity(m);
    let mut width = 1usize;
    for _ in 0..m {
        levels.push(vec![Action(0); width]);
        width *= n_percepts;
    }

    fn argmax_action(dist: &[f64]) -> Action {
        let mut best = 0;
        for (a, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = a;
            }
        }
        Action(best)
    }

    fn walk(
        policy: &dyn ChronologicalPolicy,
        alphabet: &Alphabet,
        levels: &mut [Vec<Action>],
        history: &mut History,
        depth: usize,
        slot: usize,
        m: usize,
    ) -> Result<(), AnalysisError> {
        let action = argmax_action(&policy.action_distribution(history)?);
        levels[depth][slot] = action;
        if depth + 1 < m {
            for (xi, percept) in alphabet.percepts().iter().enumerate() {
                history.push(action, *percept);
                walk(
                    policy,
                    alphabet,
                    levels,
                    history,
                    depth + 1,
                    slot * alphabet.len() + xi,
                    m,
                )?;
                history.pop();
            }
        }
        Ok(())
    }

    let mut history = History::empty();
    walk(policy, alphabet, &mut levels, &mut history, 0, 0, m)?;
    Ok(PolicyTable::new(alphabet.actions(), n_percepts, levels)?)
}

/// Verify the weighted value-difference bound on a class: with the best
/// enumerated rival defining `delta = sum_nu w_nu (V*_nu - V_nu(rival))`, the
/// mixture policy's per-environment gap must lie in `[0, delta / w_nu]`.
pub fn gap_bound_check(
    class: &WeightedClass,
    m: usize,
    cap: u64,
) -> Result<GapTable, AnalysisError> {
    let mixture_policy = BayesPolicy::new(class, PlanMode::Finite { horizon: m });
    let table = extract_policy_table(&mixture_policy, class.alphabet(), m, cap)?;
    let subject_values = values_per_env(class, &table, m)?;
    let optimal_values: Vec<f64> = class
        .environments()
        .iter()
        .map(|env| Ok::<f64, PlanError>(optimal_value(env.as_ref(), 1, m, &History::empty())?.value))
        .collect::<Result<_, _>>()?;
    let weighted_optimum = weighted_value(class, &optimal_values);

    // The tightest delta over all rivals is weighted_optimum - max_p V_xi(p).
    let mut best_rival_weighted = f64::NEG_INFINITY;
    for rival in enumerate_policies(class.alphabet().actions(), class.alphabet().len(), m, cap)? {
        let values = values_per_env(class, &rival, m)?;
        let weighted = weighted_value(class, &values);
        if weighted > best_rival_weighted {
            best_rival_weighted = weighted;
        }
    }
    let delta = weighted_optimum - best_rival_weighted;

    let scale = m as f64;
    let rows = (0..class.len())
        .map(|i| GapRow {
            horizon: m,
            env_index: i,
            optimal_avg: optimal_values[i] / scale,
            subject_avg: subject_values[i] / scale,
            gap: (optimal_values[i] - subject_values[i]) / scale,
            bound: Some(delta / class.weights()[i] / scale),
            std_err: None,
            replicates: 0,
        })
        .collect();
    Ok(GapTable { rows })
}

/// Which agent a convergence experiment instantiates per horizon.
#[derive(Debug, Clone)]
pub enum AgentKind {
    Informed,
    Bayes,
    Ete,
    DiscountedEte { discount: DiscountSequence, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub m_grid: Vec<usize>,
    pub agent: AgentKind,
    pub replicates: usize,
    pub master_seed: u64,
}

/// Average-value gaps of an agent across a class of ergodic MDPs over a grid
/// of lifespans. A fresh agent is instantiated per horizon. The informed agent
/// is evaluated exactly (its value is the optimum by construction); learning
/// agents are estimated by seeded Monte Carlo with reported standard errors.
pub fn convergence_experiment(
    specs: &[MdpSpec],
    weights: &[f64],
    r_max: f64,
    config: &ConvergenceConfig,
) -> Result<GapTable, AnalysisError> {
    for (index, spec) in specs.iter().enumerate() {
        spec.validate(r_max)?;
        if !check_ergodic(spec) {
            return Err(AnalysisError::NonErgodic { index });
        }
    }
    let env_specs: Vec<EnvSpec> = specs.iter().cloned().map(EnvSpec::Mdp).collect();
    let class = WeightedClass::from_specs(&env_specs, weights.to_vec(), r_max)?;

    let mut rows = Vec::new();
    for &m in &config.m_grid {
        for (env_index, spec) in specs.iter().enumerate() {
            let env = class.environment(env_index)?.clone();
            let optimal_avg =
                optimal_value(env.as_ref(), 1, m, &History::empty())?.value / m as f64;

            let row = match &config.agent {
                AgentKind::Informed => GapRow {
                    horizon: m,
                    env_index,
                    optimal_avg,
                    subject_avg: optimal_avg,
                    gap: 0.0,
                    bound: None,
                    std_err: None,
                    replicates: 0,
                },
                agent => {
                    let policy: Box<dyn ChronologicalPolicy> = match agent {
                        AgentKind::Bayes => Box::new(BayesPolicy::new(
                            &class,
                            PlanMode::Finite { horizon: m },
                        )),
                        AgentKind::Ete => Box::new(EteAgent::new(
                            m,
                            spec.states,
                            spec.actions,
                            spec.initial_state,
                            r_max,
                        )),
                        AgentKind::DiscountedEte { discount, eps } => {
                            Box::new(DiscountedEteAgent::new(
                                discount.clone(),
                                *eps,
                                1,
                                spec.states,
                                spec.actions,
                                spec.initial_state,
                                r_max,
                            ))
                        }
                        AgentKind::Informed => unreachable!(),
                    };
                    let averages: Vec<f64> = (0..config.replicates)
                        .into_par_iter()
                        .map(|replicate| {
                            let mut rng = substream(
                                config.master_seed,
                                &[m as u64, env_index as u64, replicate as u64],
                            );
                            let (_, total) =
                                run_episode(env.as_ref(), policy.as_ref(), m, &mut rng)?;
                            Ok(total / m as f64)
                        })
                        .collect::<Result<_, PlanError>>()?;
                    let n = averages.len() as f64;
                    let mean = averages.iter().sum::<f64>() / n;
                    let variance = if averages.len() > 1 {
                        averages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
                    } else {
                        0.0
                    };
                    GapRow {
                        horizon: m,
                        env_index,
                        optimal_avg,
                        subject_avg: mean,
                        gap: optimal_avg - mean,
                        bound: None,
                        std_err: Some((variance / n).sqrt()),
                        replicates: config.replicates,
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(GapTable { rows })
}

/// One monitored cycle of the evidence-ratio process.
#[derive(Debug, Clone)]
pub struct MartingaleStep {
    pub cycle: usize,
    pub action: Action,
    pub percept: Percept,
    /// Ratio before the cycle's percept was drawn.
    pub z_before: f64,
    /// Exact conditional expectation of the next ratio given the history.
    pub conditional_expectation: f64,
    /// Ratio after the realized percept.
    pub z_after: f64,
}

fn zero_history(e: ClassError) -> AnalysisError {
    match e {
        ClassError::Env(EnvError::UndefinedConditional { cycle }) => {
            AnalysisError::ZeroProbabilityHistory { cycle }
        }
        other => AnalysisError::Class(other),
    }
}

/// Simulate the true environment under a policy and record, for every cycle,
/// the evidence ratio together with its exact conditional expectation. The
/// per-cycle inequality `E[z_k | history] <= z_{k-1}` is an exact statement
/// about these numbers, not a statistical one.
pub fn martingale_trace(
    class: &WeightedClass,
    true_index: usize,
    policy: &dyn ChronologicalPolicy,
    cycles: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<MartingaleStep>, AnalysisError> {
    let mu = class.environment(true_index)?.clone();
    let mut history = History::empty();
    let mut steps = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        let before = evidence_ratio(class, true_index, &history).map_err(zero_history)?;
        let dist = policy.action_distribution(&history)?;
        let action = sample_action(&dist, rng)?;
        let conditional = conditional_z_expectation(class, true_index, &history, action)
            .map_err(zero_history)?;
        let percept = mu.sample(&history, action, rng)?;
        history = history.extended(action, percept);
        let after = evidence_ratio(class, true_index, &history).map_err(zero_history)?;
        steps.push(MartingaleStep {
            cycle: before.cycle,
            action,
            percept,
            z_before: before.value,
            conditional_expectation: conditional,
            z_after: after.value,
        });
    }
    Ok(steps)
}
