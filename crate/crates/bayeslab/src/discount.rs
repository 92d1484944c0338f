//! Discount sequences with closed-form tail sums and effective horizons.
//!
//! A discount sequence weights the reward of cycle `k` by `gamma_k >= 0` with
//! finite tails `Gamma_k = sum_{i>=k} gamma_i`. Normalizing a discounted value
//! by `Gamma_k` turns it into a weighted-average future reward in
//! `[0, r_max]`.
//!
//! Three kinds are supported:
//!
//! * `finite(m)`: `gamma_k = 1` for `k <= m`, else 0 — the plain
//!   finite-horizon model in disguise;
//! * `geometric(g)`: `gamma_k = g^k`, `0 < g < 1` — bounded effective
//!   horizon;
//! * `quadratic`: `gamma_k = 1/k^2` — the tail ratio
//!   `gamma_{k+1}/gamma_k -> 1`, so the effective horizon grows without
//!   bound (roughly like `k`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscountError {
    #[error("cycle index must be >= 1")]
    CycleZero,
    #[error("discount tail is zero at cycle {cycle}")]
    ZeroTail { cycle: usize },
    #[error("cannot parse discount descriptor {input:?}: expected finite:m, geometric:g, or quadratic")]
    Parse { input: String },
    #[error("geometric base {gamma} outside (0, 1)")]
    GeometricBase { gamma: f64 },
    #[error("finite horizon must be >= 1")]
    FiniteHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DiscountSequence {
    Finite { horizon: usize },
    Geometric { gamma: f64 },
    Quadratic,
}

impl DiscountSequence {
    pub fn finite(horizon: usize) -> Result<Self, DiscountError> {
        if horizon == 0 {
            return Err(DiscountError::FiniteHorizon);
        }
        Ok(Self::Finite { horizon })
    }

    pub fn geometric(gamma: f64) -> Result<Self, DiscountError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(DiscountError::GeometricBase { gamma });
        }
        Ok(Self::Geometric { gamma })
    }

    /// Weight `gamma_k` of cycle `k >= 1`.
    pub fn gamma(&self, k: usize) -> f64 {
        debug_assert!(k >= 1);
        match self {
            Self::Finite { horizon } => {
                if k <= *horizon {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Geometric { gamma } => gamma.powi(k as i32),
            Self::Quadratic => {
                let k = k as f64;
                1.0 / (k * k)
            }
        }
    }

    /// Tail sum `Gamma_k = sum_{i>=k} gamma_i` in closed form.
    ///
    /// For the quadratic sequence the tail is the trigamma value at `k`,
    /// computed by explicit summation plus an Euler-Maclaurin remainder; the
    /// result is accurate to well below 1e-12.
    pub fn gamma_tail(&self, k: usize) -> f64 {
        debug_assert!(k >= 1);
        match self {
            Self::Finite { horizon } => {
                if k <= *horizon {
                    (*horizon - k + 1) as f64
                } else {
                    0.0
                }
            }
            Self::Geometric { gamma } => gamma.powi(k as i32) / (1.0 - gamma),
            Self::Quadratic => quadratic_tail(k),
        }
    }

    /// Half-mass effective horizon: the smallest `h >= 0` such that
    /// `sum_{i=k}^{k+h} gamma_i >= Gamma_{k+h+1}`, i.e. the depth by which at
    /// least half of the remaining discount mass has been spent.
    pub fn effective_horizon(&self, k: usize) -> Result<usize, DiscountError> {
        if k == 0 {
            return Err(DiscountError::CycleZero);
        }
        if self.gamma_tail(k) <= 0.0 {
            return Err(DiscountError::ZeroTail { cycle: k });
        }
        let mut passed = 0.0;
        let mut h = 0usize;
        loop {
            passed += self.gamma(k + h);
            if passed >= self.gamma_tail(k + h + 1) {
                return Ok(h);
            }
            h += 1;
        }
    }
}

/// `sum_{i>=k} 1/i^2` by direct summation of 40 terms plus the asymptotic
/// remainder `1/n + 1/(2n^2) + 1/(6n^3) - 1/(30n^5) + 1/(42n^7)`.
fn quadratic_tail(k: usize) -> f64 {
    let cutoff = k + 40;
    let mut sum = 0.0;
    for i in k..cutoff {
        let i = i as f64;
        sum += 1.0 / (i * i);
    }
    let n = cutoff as f64;
    let n2 = n * n;
    let n3 = n2 * n;
    let n5 = n3 * n2;
    let n7 = n5 * n2;
    sum + 1.0 / n + 1.0 / (2.0 * n2) + 1.0 / (6.0 * n3) - 1.0 / (30.0 * n5) + 1.0 / (42.0 * n7)
}

impl fmt::Display for DiscountSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite { horizon } => write!(f, "finite:{horizon}"),
            Self::Geometric { gamma } => write!(f, "geometric:{gamma}"),
            Self::Quadratic => write!(f, "quadratic"),
        }
    }
}

impl FromStr for DiscountSequence {
    type Err = DiscountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = || DiscountError::Parse {
            input: s.to_string(),
        };
        match s.split_once(':') {
            None if s == "quadratic" => Ok(Self::Quadratic),
            Some(("finite", m)) => {
                Self::finite(m.parse().map_err(|_| parse_err())?)
            }
            Some(("geometric", g)) => {
                Self::geometric(g.parse().map_err(|_| parse_err())?)
            }
            _ => Err(parse_err()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent tail oracle: raw summation until the terms vanish.
    fn brute_tail(d: &DiscountSequence, k: usize) -> f64 {
        let mut sum = 0.0;
        let mut i = k;
        loop {
            let g = d.gamma(i);
            sum += g;
            i += 1;
            if i > k + 4_000_000 {
                return sum;
            }
            if g > 0.0 && g < 1e-18 && matches!(d, DiscountSequence::Geometric { .. }) {
                return sum;
            }
            if matches!(d, DiscountSequence::Finite { .. }) && g == 0.0 {
                return sum;
            }
        }
    }

    #[test]
    fn geometric_half_tail() {
        let d = DiscountSequence::geometric(0.5).unwrap();
        assert!((d.gamma_tail(1) - 1.0).abs() < 1e-12);
        assert!((d.gamma_tail(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn finite_tail_counts_ones() {
        let d = DiscountSequence::finite(5).unwrap();
        assert_eq!(d.gamma_tail(3), 3.0);
        assert_eq!(d.gamma_tail(5), 1.0);
        assert_eq!(d.gamma_tail(6), 0.0);
    }

    #[test]
    fn quadratic_tail_at_one_is_pi_squared_over_six() {
        let d = DiscountSequence::Quadratic;
        let pi2_6 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
        assert!((d.gamma_tail(1) - pi2_6).abs() < 1e-9);
    }

    #[test]
    fn quadratic_tail_matches_brute_summation() {
        let d = DiscountSequence::Quadratic;
        for k in [1usize, 2, 7, 10, 100, 1000] {
            let brute = brute_tail(&d, k);
            let closed = d.gamma_tail(k);
            assert!(
                (brute - closed).abs() < 1e-6,
                "k={k}: brute {brute} vs closed {closed}"
            );
        }
    }

    #[test]
    fn geometric_tail_matches_brute_summation() {
        for g in [0.3, 0.5, 0.9] {
            let d = DiscountSequence::geometric(g).unwrap();
            for k in [1usize, 2, 5, 17] {
                assert!((brute_tail(&d, k) - d.gamma_tail(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_horizon_geometric_half() {
        // gamma_1 = 0.5 already matches Gamma_2 = 0.5, so no extra depth is needed.
        let d = DiscountSequence::geometric(0.5).unwrap();
        assert_eq!(d.effective_horizon(1).unwrap(), 0);
        assert_eq!(d.effective_horizon(9).unwrap(), 0);
    }

    #[test]
    fn effective_horizon_geometric_nine_tenths() {
        // Half-mass rule: smallest h with 0.9^(h+1) <= 1/2, i.e. h = 6.
        let d = DiscountSequence::geometric(0.9).unwrap();
        let h = d.effective_horizon(1).unwrap();
        assert_eq!(h, 6);
        // The definition itself, checked directly at the boundary.
        let passed: f64 = (1..=1 + h).map(|i| d.gamma(i)).sum();
        assert!(passed >= d.gamma_tail(h + 2));
        let passed_before: f64 = (1..1 + h).map(|i| d.gamma(i)).sum();
        assert!(passed_before < d.gamma_tail(h + 1));
    }

    #[test]
    fn effective_horizon_quadratic_near_k() {
        let d = DiscountSequence::Quadratic;
        assert_eq!(d.effective_horizon(10).unwrap(), 9);
        for k in [50usize, 100, 200] {
            let h = d.effective_horizon(k).unwrap() as f64;
            let ratio = h / k as f64;
            assert!((0.9..=1.1).contains(&ratio), "k={k} h={h}");
        }
    }

    #[test]
    fn effective_horizon_past_finite_end_errors() {
        let d = DiscountSequence::finite(4).unwrap();
        assert_eq!(d.effective_horizon(2).unwrap(), 1);
        assert!(matches!(
            d.effective_horizon(5),
            Err(DiscountError::ZeroTail { cycle: 5 })
        ));
    }

    #[test]
    fn parse_round_trips() {
        for s in ["finite:8", "geometric:0.5", "quadratic"] {
            let d: DiscountSequence = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        assert!("harmonic".parse::<DiscountSequence>().is_err());
        assert!("geometric:1.5".parse::<DiscountSequence>().is_err());
        assert!("finite:0".parse::<DiscountSequence>().is_err());
    }
}
