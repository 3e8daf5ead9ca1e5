//! Asset-value grid and probability vectors over it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Tolerance on `sum(probs) - 1` accepted before renormalizing.
pub const BELIEF_SUM_TOL: f64 = 1e-9;

/// Strictly increasing asset values `x_1 < ... < x_n`, `n >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    values: Vec<f64>,
}

impl StateGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two states, got {}",
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("state values must be finite".into()));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "values must be strictly increasing (index {} -> {})",
                i,
                i + 1
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Width of the price range, `C = x_max - x_min`.
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    /// Largest absolute state value.
    pub fn abs_max(&self) -> f64 {
        libm::fmax(libm::fabs(self.min()), libm::fabs(self.max()))
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.min() && s <= self.max()
    }
}

/// A probability vector over the states of a [`StateGrid`].
///
/// Construction rejects negative or non-finite entries and renormalizes
/// exactly, so `sum == 1` up to rounding for every value of this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidBelief("empty probability vector".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidBelief(format!(
                "entry {} is {} (must be finite and >= 0)",
                i, probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidBelief("entries sum to zero".into()));
        }
        Ok(Self::normalized(probs, total))
    }

    /// Like [`Belief::new`] but additionally requires the input to sum to one
    /// within [`BELIEF_SUM_TOL`].
    pub fn from_probabilities(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if libm::fabs(total - 1.0) > BELIEF_SUM_TOL {
            return Err(Error::InvalidBelief(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        Self::new(probs)
    }

    /// Clamps tiny negative excursions to zero and renormalizes.
    ///
    /// Used after numerical integration steps, where round-off can push a
    /// component marginally below zero.
    pub fn from_clamped(mut probs: Vec<f64>) -> Result<Self> {
        for p in probs.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        Self::new(probs)
    }

    fn normalized(mut probs: Vec<f64>, total: f64) -> Self {
        for p in probs.iter_mut() {
            *p /= total;
        }
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Posterior mean `sum_i x_i pi_i`.
    pub fn mean(&self, grid: &StateGrid) -> f64 {
        dot(grid.values(), &self.probs)
    }

    pub fn is_degenerate(&self) -> bool {
        self.probs.iter().filter(|p| **p > 0.0).count() <= 1
    }

    /// L1 distance `sum_i |pi_i - other_i|`.
    pub fn l1_distance(&self, other: &Belief) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| libm::fabs(a - b))
            .sum()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.probs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.probs.len(),
            });
        }
        Ok(())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
