//! On-disk description of a weighted environment class.
//!
//! A class file is a JSON document:
//!
//! ```json
//! {
//!   "r_max": 1.0,
//!   "environments": [
//!     { "kind": "bandit", "arms": [0.9, 0.1] },
//!     { "kind": "bandit", "arms": [0.1, 0.9] }
//!   ],
//!   "weights": [0.5, 0.5]
//! }
//! ```
//!
//! Environments may be `bandit` (`arms`), `mdp` (`states`, `actions`,
//! `transitions`, `rewards`, optional `initial_state`) or `iid` (`probs`,
//! `rewards`, optional `actions`). Weights must be positive; a weight sum off
//! by at most 1e-9 is renormalized exactly and logged, anything worse is
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixture::{ClassError, WeightedClass};
use crate::models::{EnvSpec, SpecError};

/// Weight-sum slack accepted before renormalization.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClassFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed class file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
}

fn field_error(path: impl Into<String>, message: impl Into<String>) -> ClassFileError {
    ClassFileError::Field {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassFile {
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    pub environments: Vec<EnvSpec>,
    pub weights: Vec<f64>,
}

fn default_r_max() -> f64 {
    1.0
}

impl ClassFile {
    pub fn from_json(text: &str) -> Result<Self, ClassFileError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Validate and build the weighted class, renormalizing near-unit weight
    /// sums exactly.
    pub fn build(&self) -> Result<WeightedClass, ClassFileError> {
        if self.environments.is_empty() {
            return Err(field_error("environments", "needs at least one entry"));
        }
        if self.weights.len() != self.environments.len() {
            return Err(field_error(
                "weights",
                format!(
                    "{} weights for {} environments",
                    self.weights.len(),
                    self.environments.len()
                ),
            ));
        }
        if !(self.r_max > 0.0) {
            return Err(field_error("r_max", "must be positive"));
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !(w > 0.0) {
                return Err(field_error(format!("weights[{i}]"), "must be positive"));
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(field_error(
                "weights",
                format!("sum to {sum}, expected 1 within {WEIGHT_SUM_TOLERANCE:e}"),
            ));
        }
        let weights: Vec<f64> = if sum != 1.0 {
            log::info!("renormalizing class weights: sum was {sum}");
            self.weights.iter().map(|w| w / sum).collect()
        } else {
            self.weights.clone()
        };

        for (i, spec) in self.environments.iter().enumerate() {
            spec.validate(self.r_max)
                .map_err(|e| spec_field_error(i, e))?;
        }
        WeightedClass::from_specs(&self.environments, weights, self.r_max).map_err(|e| match e {
            ClassError::AlphabetMismatch { index } => field_error(
                format!("environments[{index}]"),
                "action alphabet differs from the rest of the class",
            ),
            other => field_error("environments", other.to_string()),
        })
    }
}

fn spec_field_error(index: usize, error: SpecError) -> ClassFileError {
    let prefix = format!("environments[{index}]");
    let path = match &error {
        SpecError::TransitionRow { action, state, .. }
        | SpecError::TransitionEntry { action, state, .. } => {
            format!("{prefix}.transitions[{action}][{state}]")
        }
        SpecError::RewardRange { action, state, .. } => {
            format!("{prefix}.rewards[{action}][{state}]")
        }
        SpecError::ArmProbability { index, .. } => format!("{prefix}.arms[{index}]"),
        SpecError::ProbEntry { index, .. } => format!("{prefix}.probs[{index}]"),
        SpecError::ProbVector { .. } => format!("{prefix}.probs"),
        SpecError::IidShape { .. } => format!("{prefix}.rewards"),
        SpecError::IidRewardRange { index, .. } => format!("{prefix}.rewards[{index}]"),
        SpecError::InitialState { .. } => format!("{prefix}.initial_state"),
        _ => prefix.clone(),
    };
    field_error(path, error.to_string())
}

/// Read, parse, and validate a class file.
pub fn parse_class_file(path: impl AsRef<Path>) -> Result<(ClassFile, WeightedClass), ClassFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ClassFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file = ClassFile::from_json(&text)?;
    let class = file.build()?;
    Ok((file, class))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BANDITS: &str = r#"{
        "r_max": 1.0,
        "environments": [
            { "kind": "bandit", "arms": [0.9, 0.1] },
            { "kind": "bandit", "arms": [0.1, 0.9] }
        ],
        "weights": [0.5, 0.5]
    }"#;

    #[test]
    fn two_bandit_file_builds_a_class_of_two() {
        let file = ClassFile::from_json(TWO_BANDITS).unwrap();
        let class = file.build().unwrap();
        assert_eq!(class.len(), 2);
        assert_eq!(class.alphabet().actions(), 2);
    }

    #[test]
    fn negative_weight_names_the_entry() {
        let text = TWO_BANDITS.replace("[0.5, 0.5]", "[1.1, -0.1]");
        let err = ClassFile::from_json(&text).unwrap().build().unwrap_err();
        let message = err.to_string();
        assert!(message.contains("weights[1]"), "{message}");
    }

    #[test]
    fn bad_transition_row_names_the_row() {
        let text = r#"{
            "r_max": 1.0,
            "environments": [
                { "kind": "mdp", "states": 2, "actions": 1,
                  "transitions": [[[0.4, 0.5], [0.5, 0.5]]],
                  "rewards": [[[0.0, 0.0], [0.0, 0.0]]] }
            ],
            "weights": [1.0]
        }"#;
        let err = ClassFile::from_json(text).unwrap().build().unwrap_err();
        let message = err.to_string();
        assert!(message.contains("transitions[0][0]"), "{message}");
    }

    #[test]
    fn near_unit_weight_sums_renormalize() {
        let text = TWO_BANDITS.replace("[0.5, 0.5]", "[0.5000000002, 0.5]");
        let class = ClassFile::from_json(&text).unwrap().build().unwrap();
        let total: f64 = class.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn far_off_weight_sums_are_rejected() {
        let text = TWO_BANDITS.replace("[0.5, 0.5]", "[0.6, 0.5]");
        let err = ClassFile::from_json(&text).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("sum to"));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(
            ClassFile::from_json("{"),
            Err(ClassFileError::Parse(_))
        ));
    }

    #[test]
    fn mixed_kinds_share_the_union_alphabet() {
        let text = r#"{
            "r_max": 1.0,
            "environments": [
                { "kind": "bandit", "arms": [0.9, 0.1] },
                { "kind": "iid", "probs": [0.25, 0.75], "rewards": [0.0, 1.0], "actions": 2 }
            ],
            "weights": [0.5, 0.5]
        }"#;
        let class = ClassFile::from_json(text).unwrap().build().unwrap();
        // Bandit percepts are (0, 0.0) and (0, 1.0); the iid process adds (1, 1.0).
        assert_eq!(class.alphabet().len(), 3);
    }
}
