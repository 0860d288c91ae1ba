//! Exhaustive search over covariate subsets.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiEnvDataset;
use crate::error::{Error, Result};
use crate::invariance::{evaluate_subset, InvariantNode, InvarianceConfig, LossTable, Objective};
use crate::nuisance::NuisanceConfig;
use crate::subset::SubsetMask;

/// Largest `d` searched exhaustively without a size cap.
pub const UNCAPPED_LIMIT: usize = 12;
/// Largest `d` searched at all.
pub const HARD_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Combinatorial,
    Gumbel,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Combinatorial => "combinatorial",
            SelectionMethod::Gumbel => "gumbel",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combinatorial" => Ok(Self::Combinatorial),
            "gumbel" => Ok(Self::Gumbel),
            other => Err(Error::InvalidInput(format!(
                "unknown selection method '{other}' (expected combinatorial or gumbel)"
            ))),
        }
    }
}

/// A selected adjustment set and the losses behind the choice.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub subset: SubsetMask,
    pub node: InvariantNode,
    pub j_t: f64,
    pub j_y: f64,
    /// `min(j_t, j_y)`.
    pub loss: f64,
    pub method: SelectionMethod,
    pub seed: u64,
    pub loss_table: LossTable,
}

#[derive(Serialize, Deserialize)]
struct SelectionLosses {
    #[serde(rename = "J_T")]
    j_t: Option<f64>,
    #[serde(rename = "J_Y")]
    j_y: Option<f64>,
    combined: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SelectionJson {
    subset: SubsetMask,
    node: InvariantNode,
    method: SelectionMethod,
    losses: SelectionLosses,
    seed: u64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl SelectionResult {
    pub(crate) fn from_objective(
        objective: &Objective,
        method: SelectionMethod,
        seed: u64,
        loss_table: LossTable,
    ) -> Self {
        Self {
            subset: objective.subset.clone(),
            node: objective.node,
            j_t: objective.j_t,
            j_y: objective.j_y,
            loss: objective.combined,
            method,
            seed,
            loss_table,
        }
    }

    /// A selection fixed by hand, with an empty loss table.
    pub fn fixed(subset: SubsetMask, node: InvariantNode) -> Self {
        Self {
            subset,
            node,
            j_t: f64::NAN,
            j_y: f64::NAN,
            loss: f64::NAN,
            method: SelectionMethod::Combinatorial,
            seed: 0,
            loss_table: LossTable::new(crate::invariance::Aggregation::Max),
        }
    }

    /// `{subset, node, method, losses: {J_T, J_Y, combined}, seed}`. The loss
    /// table is exported separately.
    pub fn to_json(&self) -> Result<String> {
        let doc = SelectionJson {
            subset: self.subset.clone(),
            node: self.node,
            method: self.method,
            losses: SelectionLosses {
                j_t: finite(self.j_t),
                j_y: finite(self.j_y),
                combined: finite(self.loss),
            },
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Reads the JSON written by [`SelectionResult::to_json`]; the loss table
    /// comes back empty.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SelectionJson = serde_json::from_str(text)?;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        Ok(Self {
            subset: doc.subset,
            node: doc.node,
            j_t: nan(doc.losses.j_t),
            j_y: nan(doc.losses.j_y),
            loss: nan(doc.losses.combined),
            method: doc.method,
            seed: doc.seed,
            loss_table: LossTable::new(crate::invariance::Aggregation::Max),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_size: Option<usize>,
    pub invariance: InvarianceConfig,
    pub nuisance: NuisanceConfig,
}

impl SearchConfig {
    pub fn new(max_size: Option<usize>, seed: u64) -> Self {
        Self {
            max_size,
            invariance: InvarianceConfig::with_seed(seed),
            nuisance: NuisanceConfig::default(),
        }
    }
}

/// [`combinatorial_select_with`] using max aggregation and default penalties.
pub fn combinatorial_select(data: &MultiEnvDataset, max_size: Option<usize>, seed: u64) -> Result<SelectionResult> {
    combinatorial_select_with(data, &SearchConfig::new(max_size, seed))
}

/// Evaluates every subset of at most `max_size` covariates and returns the
/// minimizer of `min(J_T, J_Y)`. Ties keep the earliest subset in
/// (cardinality, lexicographic) order. Subsets whose evaluation fails score
/// `+∞`.
pub fn combinatorial_select_with(data: &MultiEnvDataset, cfg: &SearchConfig) -> Result<SelectionResult> {
    data.require_multi_env()?;
    let d = data.d();
    let count = SubsetMask::count(d, cfg.max_size);
    if d > HARD_LIMIT || (d > UNCAPPED_LIMIT && cfg.max_size.is_none()) {
        return Err(Error::SearchTooLarge { d, subsets: count });
    }
    let subsets = SubsetMask::enumerate(d, cfg.max_size);
    let results: Vec<Result<Objective>> = subsets
        .par_iter()
        .map(|s| evaluate_subset(data, s, &cfg.invariance, &cfg.nuisance))
        .collect();

    let mut table = LossTable::new(cfg.invariance.aggregation);
    let mut best: Option<Objective> = None;
    let mut first_error = None;
    for (subset, result) in subsets.iter().zip(results) {
        match result {
            Ok(obj) => {
                table.entries.extend(obj.entries.iter().cloned());
                let better = match &best {
                    None => !obj.combined.is_nan(),
                    Some(b) => obj.combined < b.combined,
                };
                if better {
                    best = Some(obj);
                }
            }
            Err(e) => {
                log::warn!("subset {subset} scored +inf: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some(obj) => Ok(SelectionResult::from_objective(
            &obj,
            SelectionMethod::Combinatorial,
            cfg.invariance.seed,
            table,
        )),
        None => Err(first_error.unwrap_or_else(|| Error::InvalidInput("no subset could be evaluated".into()))),
    }
}
