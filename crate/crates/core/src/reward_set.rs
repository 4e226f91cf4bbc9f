//! The candidate reward set `Z` and its interpolation rule.

use crate::error::{arg_err, Result};
use crate::scalar::Scalar;

/// `N_z` candidate reward values, rebuilt whenever a new true reward shows up.
///
/// Values are equally spaced on `[min(observed ∪ {0}), max(observed ∪ {0})]`.
/// Until some nonzero reward has been observed the span is degenerate; the set
/// is then *unanchored* and holds `N_z` zeros, so any selection over it yields 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSet<S> {
    size: usize,
    values: Vec<S>,
    observed: Vec<S>,
}

impl<S: Scalar> RewardSet<S> {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return arg_err(format!("reward set size must be at least 2, got {size}"));
        }
        Ok(Self { size, values: vec![S::zero(); size], observed: Vec::new() })
    }

    /// Builds a set with explicit values, bypassing interpolation.
    pub fn from_values(values: Vec<S>) -> Result<Self> {
        if values.len() < 2 {
            return arg_err("reward set needs at least 2 values");
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return arg_err("reward set values must be strictly increasing");
        }
        let observed = vec![values[0], values[values.len() - 1]];
        Ok(Self { size: values.len(), values, observed })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// Distinct true rewards seen so far, sorted.
    pub fn observed(&self) -> &[S] {
        &self.observed
    }

    pub fn is_anchored(&self) -> bool {
        self.observed.iter().any(|r| *r != S::zero())
    }

    pub fn has_observed(&self, r: S) -> bool {
        self.observed.binary_search_by(|x| x.partial_cmp(&r).expect("finite reward")).is_ok()
    }

    /// Records `r` and rebuilds the values. Returns `false` (and does nothing)
    /// when `r` was already observed.
    pub fn observe(&mut self, r: S) -> bool {
        match self.observed.binary_search_by(|x| x.partial_cmp(&r).expect("finite reward")) {
            Ok(_) => false,
            Err(pos) => {
                self.observed.insert(pos, r);
                self.rebuild();
                true
            }
        }
    }

    fn rebuild(&mut self) {
        if !self.is_anchored() {
            self.values = vec![S::zero(); self.size];
            return;
        }
        let (first, last) = (self.observed[0], self.observed[self.observed.len() - 1]);
        let (lo, hi) = if self.observed.len() == 1 {
            (first.min(S::zero()), first.max(S::zero()))
        } else {
            (first, last)
        };
        self.values = linspace(lo, hi, self.size);
    }

    /// Index of `z` in the value list, if present.
    pub fn index_of(&self, z: S) -> Option<usize> {
        self.values.iter().position(|v| *v == z)
    }
}

/// `n` points from `lo` to `hi` inclusive; both endpoints are exact.
pub fn linspace<S: Scalar>(lo: S, hi: S, n: usize) -> Vec<S> {
    let last = S::from_usize_lossy(n - 1);
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * S::from_usize_lossy(i) / last
            }
        })
        .collect()
}
