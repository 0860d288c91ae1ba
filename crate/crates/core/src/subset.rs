//! Candidate adjustment sets.

use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A subset of covariate column indices, kept sorted and free of duplicates.
///
/// The derived ordering is lexicographic on the sorted indices; use
/// [`SubsetMask::search_order`] for the (cardinality, lexicographic) order
/// in which the exhaustive search enumerates candidates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetMask(Vec<usize>);

impl SubsetMask {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// All columns `0..d`.
    pub fn full(d: usize) -> Self {
        Self((0..d).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, column: usize) -> bool {
        self.0.binary_search(&column).is_ok()
    }

    /// Fails when an index is not a valid column of a `d`-column design.
    pub fn check_within(&self, d: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= d => Err(Error::InvalidInput(format!(
                "subset {self} references column {last} but the data has {d} covariates"
            ))),
            _ => Ok(()),
        }
    }

    /// Key for the (cardinality, lexicographic) order.
    pub fn search_order(&self) -> (usize, &[usize]) {
        (self.0.len(), &self.0)
    }

    /// Every subset of `0..d` with at most `max_size` elements, in
    /// (cardinality, lexicographic) order.
    pub fn enumerate(d: usize, max_size: Option<usize>) -> Vec<SubsetMask> {
        let top = max_size.map_or(d, |m| m.min(d));
        (0..=top)
            .flat_map(|k| (0..d).combinations(k).map(SubsetMask))
            .collect()
    }

    /// Number of subsets [`SubsetMask::enumerate`] yields.
    pub fn count(d: usize, max_size: Option<usize>) -> u128 {
        let top = max_size.map_or(d, |m| m.min(d));
        (0..=top).map(|k| binomial(d, k)).sum()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(";"))
    }
}

impl From<Vec<usize>> for SubsetMask {
    fn from(indices: Vec<usize>) -> Self {
        Self::new(indices)
    }
}
