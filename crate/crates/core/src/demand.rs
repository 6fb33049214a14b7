//! Bounded integer demand distributions.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("support is empty after clipping at zero")]
    DegenerateSupport,
    #[error("no samples to build an empirical distribution from")]
    EmptySamples,
    #[error("negative demand value {0}")]
    NegativeValue(i64),
    #[error("probabilities must be finite, nonnegative and sum to one (sum = {0})")]
    BadProbabilities(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Probability mass function on the integer interval `[min, max]`, `min >= 0`.
///
/// Both end points carry positive mass, so `(min, max)` are the tight support
/// bounds `(d, D)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandPmf {
    min: i64,
    probs: Vec<f64>,
}

impl DemandPmf {
    /// Builds a pmf from probabilities starting at `min`. Zero-mass tails are
    /// trimmed; the total must be one within `1e-9` and is then renormalized.
    pub fn new(min: i64, probs: Vec<f64>) -> Result<Self, DemandError> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > SUM_TOL {
            return Err(DemandError::BadProbabilities(total));
        }
        Self::from_weights(min, probs)
    }

    /// Normalizes nonnegative weights starting at `min`.
    pub fn from_weights(min: i64, weights: Vec<f64>) -> Result<Self, DemandError> {
        if min < 0 {
            return Err(DemandError::NegativeValue(min));
        }
        if weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DemandError::BadProbabilities(f64::NAN));
        }
        let first = weights.iter().position(|&p| p > 0.0);
        let last = weights.iter().rposition(|&p| p > 0.0);
        let (Some(first), Some(last)) = (first, last) else {
            return Err(DemandError::DegenerateSupport);
        };
        let kept = &weights[first..=last];
        let total: f64 = kept.iter().sum();
        Ok(DemandPmf {
            min: min + first as i64,
            probs: kept.iter().map(|p| p / total).collect(),
        })
    }

    pub fn point(value: i64) -> Result<Self, DemandError> {
        Self::from_weights(value, vec![1.0])
    }

    /// Uniform on `lo..=hi`.
    pub fn uniform(lo: i64, hi: i64) -> Result<Self, DemandError> {
        if hi < lo {
            return Err(DemandError::DegenerateSupport);
        }
        Self::from_weights(lo, vec![1.0; (hi - lo + 1) as usize])
    }

    /// Counts per value, e.g. `{5: 2, 7: 1}`.
    pub fn from_counts(counts: &BTreeMap<i64, u64>) -> Result<Self, DemandError> {
        let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) else {
            return Err(DemandError::EmptySamples);
        };
        if lo < 0 {
            return Err(DemandError::NegativeValue(lo));
        }
        let mut w = vec![0.0; (hi - lo + 1) as usize];
        for (&v, &c) in counts {
            w[(v - lo) as usize] = c as f64;
        }
        Self::from_weights(lo, w).map_err(|e| match e {
            DemandError::DegenerateSupport => DemandError::EmptySamples,
            other => other,
        })
    }

    /// Support lower bound `d`.
    pub fn min(&self) -> i64 {
        self.min
    }

    /// Support upper bound `D`.
    pub fn max(&self) -> i64 {
        self.min + self.probs.len() as i64 - 1
    }

    pub fn support(&self) -> (i64, i64) {
        (self.min(), self.max())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, v: i64) -> f64 {
        if v < self.min || v > self.max() {
            0.0
        } else {
            self.probs[(v - self.min) as usize]
        }
    }

    /// `(value, probability)` pairs in ascending value order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(i, &p)| (self.min + i as i64, p))
    }

    /// `P(omega <= v)`.
    pub fn cdf(&self, v: i64) -> f64 {
        if v < self.min {
            0.0
        } else if v >= self.max() {
            1.0
        } else {
            self.probs[..=(v - self.min) as usize].iter().sum()
        }
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(v, p)| v as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.iter().map(|(v, p)| (v as f64 - m).powi(2) * p).sum()
    }

    /// Total-variation distance.
    pub fn tv_distance(&self, other: &DemandPmf) -> f64 {
        let lo = self.min.min(other.min);
        let hi = self.max().max(other.max());
        0.5 * (lo..=hi).map(|v| (self.prob(v) - other.prob(v)).abs()).sum::<f64>()
    }

    /// Same shape moved by `offset` units, clipped at zero.
    pub fn shifted(&self, offset: i64) -> DemandPmf {
        if offset >= 0 || self.min + offset >= 0 {
            return DemandPmf { min: self.min + offset, probs: self.probs.clone() };
        }
        let mut counts = BTreeMap::new();
        for (v, p) in self.iter() {
            *counts.entry((v + offset).max(0)).or_insert(0.0) += p;
        }
        let lo = *counts.keys().next().unwrap_or(&0);
        let hi = *counts.keys().next_back().unwrap_or(&0);
        let w = (lo..=hi).map(|v| counts.get(&v).copied().unwrap_or(0.0)).collect();
        DemandPmf::from_weights(lo, w).expect("shift preserves mass")
    }

    /// Inverse-CDF draw consuming exactly one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        self.quantile(u)
    }

    /// Smallest `v` with `P(omega <= v) > u`, for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> i64 {
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return self.min + i as i64;
            }
        }
        self.max()
    }
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Discretizes `N(mean, std^2)` onto integers with half-integer bins, truncated
/// at `mean +- trunc_sigmas * std` and clipped at zero.
pub fn discretize_normal(mean: f64, std: f64, trunc_sigmas: f64) -> Result<DemandPmf, DemandError> {
    if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
        return Err(DemandError::InvalidParameter(format!("std must be positive, got {std}")));
    }
    if !(trunc_sigmas >= 0.0 && trunc_sigmas.is_finite()) {
        return Err(DemandError::InvalidParameter(format!(
            "trunc_sigmas must be nonnegative, got {trunc_sigmas}"
        )));
    }
    // Snap to avoid ceil/floor of values like 16.000000000000004.
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let lo = (snap(mean - trunc_sigmas * std).ceil() as i64).max(0);
    let hi = snap(mean + trunc_sigmas * std).floor() as i64;
    if hi < lo {
        return Err(DemandError::DegenerateSupport);
    }
    let weights = (lo..=hi)
        .map(|v| {
            let v = v as f64;
            phi((v + 0.5 - mean) / std) - phi((v - 0.5 - mean) / std)
        })
        .collect();
    DemandPmf::from_weights(lo, weights)
}

/// Empirical pmf with tight observed support: `P(v) = count(v) / N`.
pub fn pmf_from_samples(samples: &[i64]) -> Result<DemandPmf, DemandError> {
    if samples.is_empty() {
        return Err(DemandError::EmptySamples);
    }
    let mut counts = BTreeMap::new();
    for &s in samples {
        if s < 0 {
            return Err(DemandError::NegativeValue(s));
        }
        *counts.entry(s).or_insert(0u64) += 1;
    }
    DemandPmf::from_counts(&counts)
}

/// Distribution of the sum of two independent draws.
pub fn convolve(a: &DemandPmf, b: &DemandPmf) -> DemandPmf {
    let mut out = vec![0.0; a.probs.len() + b.probs.len() - 1];
    for (i, &pa) in a.probs.iter().enumerate() {
        for (j, &pb) in b.probs.iter().enumerate() {
            out[i + j] += pa * pb;
        }
    }
    DemandPmf::from_weights(a.min + b.min, out).expect("convolution of valid pmfs is valid")
}

/// Demand over a finite horizon: one pmf for every stage, or one per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandModel {
    Stationary { pmf: DemandPmf },
    Staged { pmfs: Vec<DemandPmf> },
}

impl DemandModel {
    pub fn stationary(pmf: DemandPmf) -> Self {
        DemandModel::Stationary { pmf }
    }

    pub fn stage(&self, k: usize) -> &DemandPmf {
        match self {
            DemandModel::Stationary { pmf } => pmf,
            DemandModel::Staged { pmfs } => &pmfs[k.min(pmfs.len() - 1)],
        }
    }

    /// Checks a staged model against the solver horizon.
    pub fn check_horizon(&self, horizon: usize) -> Result<(), DemandError> {
        match self {
            DemandModel::Stationary { .. } => Ok(()),
            DemandModel::Staged { pmfs } if pmfs.len() == horizon => Ok(()),
            DemandModel::Staged { pmfs } => Err(DemandError::InvalidParameter(format!(
                "{} stage pmfs for horizon {horizon}",
                pmfs.len()
            ))),
        }
    }

    /// Largest support bound over the first `horizon` stages.
    pub fn max_over(&self, horizon: usize) -> i64 {
        (0..horizon.max(1)).map(|k| self.stage(k).max()).max().unwrap_or(0)
    }
}

/// Declarative demand description as written in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandSpec {
    Normal {
        mean: f64,
        std: f64,
        #[serde(default = "default_trunc")]
        trunc_sigmas: f64,
    },
    /// `counts[i] = [value, count]`.
    Empirical { counts: Vec<(i64, u64)> },
    Point { value: i64 },
}

fn default_trunc() -> f64 {
    4.0
}

impl DemandSpec {
    pub fn to_pmf(&self) -> Result<DemandPmf, DemandError> {
        self.shifted_pmf(0.0)
    }

    /// The pmf with its mean moved by `delta`. Normal demand is re-discretized
    /// around the new mean; other kinds shift by `delta` rounded to whole units.
    pub fn shifted_pmf(&self, delta: f64) -> Result<DemandPmf, DemandError> {
        match self {
            DemandSpec::Normal { mean, std, trunc_sigmas } => {
                discretize_normal(mean + delta, *std, *trunc_sigmas)
            }
            DemandSpec::Empirical { counts } => {
                let mut map = BTreeMap::new();
                for &(v, c) in counts {
                    *map.entry(v).or_insert(0) += c;
                }
                Ok(DemandPmf::from_counts(&map)?.shifted(delta.round() as i64))
            }
            DemandSpec::Point { value } => {
                if *value < 0 {
                    return Err(DemandError::NegativeValue(*value));
                }
                Ok(DemandPmf::point(*value)?.shifted(delta.round() as i64))
            }
        }
    }
}
