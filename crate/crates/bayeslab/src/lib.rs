//! A desk-scale laboratory for Bayes-mixture sequential decision making.
//!
//! The crate models agents acting in general chronological environments:
//! in cycle `k` the agent emits an action, the environment answers with a
//! percept carrying a bounded reward, and both sides may condition on the
//! complete history. On top of that sit
//!
//! * exact expectimax planning, finite-horizon and discounted
//!   ([`value`], [`discount`]);
//! * Bayes mixtures over finite environment classes with posterior tracking
//!   and evidence-ratio monitoring ([`mixture`]);
//! * agents: the Bayes-optimal mixture policy, the informed policy, and
//!   explore-then-exploit baselines ([`policy`]);
//! * enumeration-based certification of the mixture policy's optimality
//!   properties and convergence experiments ([`analysis`]).
//!
//! Everything is exact expectation or seeded simulation; no approximation is
//! silent. See the book under `book/` for a guided tour.

pub mod analysis;
pub mod classfile;
pub mod discount;
pub mod env;
pub mod mixture;
pub mod models;
pub mod policy;
pub mod rng;
pub mod value;

pub use analysis::{
    balanced_delta, convergence_experiment, extract_policy_table, gap_bound_check,
    martingale_trace, pareto_check, AgentKind, AnalysisError, BalanceReport, ConvergenceConfig,
    GapRow, GapTable, MartingaleStep, ParetoVerdict, ParetoWitness, DOMINANCE_EPS,
};
pub use classfile::{parse_class_file, ClassFile, ClassFileError};
pub use discount::{DiscountError, DiscountSequence};
pub use env::{
    Action, Alphabet, ChronologicalEnvironment, DynEnv, EnvError, History, Percept,
    PROB_TOLERANCE,
};
pub use mixture::{
    conditional_z_expectation, evidence_ratio, mixture_env, posterior_weights, update_posterior,
    ClassError, EvidenceRatio, MixtureEnv, PosteriorState, WeightedClass,
};
pub use models::{
    bandit_env, check_ergodic, mdp_env, BanditEnv, BanditSpec, EnvSpec, IidEnv, IidSpec, MdpEnv,
    MdpSpec, SpecError,
};
pub use policy::{
    ceil_sqrt, estimate_transition, exploration_cutoff, plan_action, run_episode, sample_action,
    BayesAgent, BayesPolicy, DiscountedEteAgent, EteAgent, InformedPolicy, PlanMode,
    TransitionCounts,
};
pub use rng::{substream, Stream};
pub use value::{
    discounted_optimal_action, discounted_optimal_value, discounted_value_of_policy,
    enumerate_policies, optimal_action, optimal_value, truncation_depth, value_of_policy,
    ChronologicalPolicy, Normalization, PlanError, PolicyEnumeration, PolicyTable, TablePolicy,
    UniformPolicy, ValueReport, DEFAULT_ENUMERATION_CAP,
};
