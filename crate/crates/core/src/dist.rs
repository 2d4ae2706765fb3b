//! Empirical discrete distributions over integer values.
//!
//! Used for packets-per-group, groups-per-frame and payload-size draws.
//! Weights are normalized at construction and kept normalized thereafter.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("distribution needs at least one value")]
    Empty,
    #[error("values and weights differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("weight {0} is not finite and positive")]
    BadWeight(f64),
    #[error("duplicate value {0}")]
    DuplicateValue(u32),
}

/// Normalized probability mass over distinct `u32` values, sorted by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistRepr", into = "DistRepr")]
pub struct DiscreteDist {
    values: Vec<u32>,
    weights: Vec<f64>,
}

/// Serialized form: parallel arrays, friendlier in config files.
#[derive(Serialize, Deserialize)]
struct DistRepr {
    values: Vec<u32>,
    weights: Vec<f64>,
}

impl TryFrom<DistRepr> for DiscreteDist {
    type Error = DistError;
    fn try_from(r: DistRepr) -> Result<Self, DistError> {
        DiscreteDist::new(r.values, r.weights)
    }
}

impl From<DiscreteDist> for DistRepr {
    fn from(d: DiscreteDist) -> Self {
        DistRepr { values: d.values, weights: d.weights }
    }
}

impl DiscreteDist {
    /// Builds a normalized distribution. Weights must be finite and > 0;
    /// values must be distinct. Entries are sorted by value.
    pub fn new(values: Vec<u32>, weights: Vec<f64>) -> Result<Self, DistError> {
        if values.is_empty() {
            return Err(DistError::Empty);
        }
        if values.len() != weights.len() {
            return Err(DistError::LengthMismatch(values.len(), weights.len()));
        }
        for &w in &weights {
            if !w.is_finite() || w <= 0.0 {
                return Err(DistError::BadWeight(w));
            }
        }
        let mut pairs: Vec<(u32, f64)> = values.into_iter().zip(weights).collect();
        pairs.sort_by_key(|&(v, _)| v);
        for pair in pairs.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(DistError::DuplicateValue(pair[0].0));
            }
        }
        let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
        let (values, weights) = pairs.into_iter().map(|(v, w)| (v, w / total)).unzip();
        Ok(Self { values, weights })
    }

    /// Point mass at a single value.
    pub fn point(value: u32) -> Self {
        Self { values: vec![value], weights: vec![1.0] }
    }

    /// Empirical distribution from observed samples.
    pub fn from_samples(samples: &[u32]) -> Result<Self, DistError> {
        if samples.is_empty() {
            return Err(DistError::Empty);
        }
        let mut counts: std::collections::BTreeMap<u32, u64> = Default::default();
        for &s in samples {
            *counts.entry(s).or_default() += 1;
        }
        let n = samples.len() as f64;
        let (values, weights) = counts.into_iter().map(|(v, c)| (v, c as f64 / n)).unzip();
        Ok(Self { values, weights })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(&v, &w)| v as f64 * w).sum()
    }

    pub fn min_value(&self) -> u32 {
        self.values[0]
    }

    pub fn max_value(&self) -> u32 {
        *self.values.last().unwrap()
    }

    /// Highest-probability value; ties break toward the smaller value.
    pub fn mode(&self) -> u32 {
        let mut best = (self.values[0], self.weights[0]);
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            if w > best.1 {
                best = (v, w);
            }
        }
        best.0
    }

    /// Probability mass at values >= `threshold`.
    pub fn mass_at_or_above(&self, threshold: u32) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .filter(|&(&v, _)| v >= threshold)
            .map(|(_, &w)| w)
            .sum()
    }

    /// Inverse-CDF sample. Draws exactly one uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            acc += w;
            if r < acc {
                return v;
            }
        }
        // Rounding can leave acc slightly below 1.0.
        *self.values.last().unwrap()
    }

    /// Total-variation distance: 0.5 * sum over the union support of |p - q|.
    pub fn tv_distance(&self, other: &Self) -> f64 {
        let mut diff = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < self.values.len() || j < other.values.len() {
            match (self.values.get(i), other.values.get(j)) {
                (Some(&a), Some(&b)) if a == b => {
                    diff += (self.weights[i] - other.weights[j]).abs();
                    i += 1;
                    j += 1;
                }
                (Some(&a), Some(&b)) if a < b => {
                    diff += self.weights[i];
                    i += 1;
                }
                (Some(_), Some(_)) => {
                    diff += other.weights[j];
                    j += 1;
                }
                (Some(_), None) => {
                    diff += self.weights[i];
                    i += 1;
                }
                (None, Some(_)) => {
                    diff += other.weights[j];
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        diff / 2.0
    }

    /// Rescales the mean by `factor`, splitting each value's mass between the
    /// two integers bracketing `value * factor` so the expectation scales
    /// exactly (up to clamping at `lo`/`hi`).
    pub fn scale_mean(&self, factor: f64, lo: u32, hi: u32) -> Self {
        let mut mass: std::collections::BTreeMap<u32, f64> = Default::default();
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            let x = (v as f64 * factor).clamp(lo as f64, hi as f64);
            let floor = x.floor();
            let frac = x - floor;
            let fv = (floor as u32).max(lo);
            let cv = (fv + 1).min(hi);
            if frac > 0.0 && cv > fv {
                *mass.entry(fv).or_default() += w * (1.0 - frac);
                *mass.entry(cv).or_default() += w * frac;
            } else {
                *mass.entry(fv).or_default() += w;
            }
        }
        let (values, weights): (Vec<u32>, Vec<f64>) =
            mass.into_iter().filter(|&(_, w)| w > 0.0).unzip();
        Self { values, weights }
    }
}
