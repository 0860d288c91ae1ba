//! Per-environment AIPW estimates of the average treatment effect.
//!
//! Nuisances are fitted once on the pooled sample restricted to the chosen
//! columns; the doubly robust average is then taken within each
//! environment:
//!
//! ```text
//! θ̂_e = mean_i [ μ̂₁ − μ̂₀ + (Y − μ̂₁)·T/π̂ − (Y − μ̂₀)·(1 − T)/(1 − π̂) ]
//! ```

use std::fmt;
use std::io::Write;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::dataset::{Environment, MultiEnvDataset};
use crate::error::{Error, Result};
use crate::invariance::InvariantNode;
use crate::nuisance::{pooled_nuisances_with, NuisanceConfig, Nuisances};
use crate::search::SelectionResult;
use crate::subset::SubsetMask;

/// AIPW average from per-row predictions.
pub fn aipw_from_predictions(
    t: ArrayView1<f64>,
    y: ArrayView1<f64>,
    mu0: ArrayView1<f64>,
    mu1: ArrayView1<f64>,
    pi: ArrayView1<f64>,
) -> Result<f64> {
    let n = t.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty environment".into()));
    }
    if [y.len(), mu0.len(), mu1.len(), pi.len()].iter().any(|&l| l != n) {
        return Err(Error::DimensionMismatch("AIPW inputs differ in length".into()));
    }
    if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Positivity("propensity outside (0, 1)".into()));
    }
    let mut sum = 0.0;
    for i in 0..n {
        sum += mu1[i] - mu0[i] + (y[i] - mu1[i]) * t[i] / pi[i] - (y[i] - mu0[i]) * (1.0 - t[i]) / (1.0 - pi[i]);
    }
    Ok(sum / n as f64)
}

/// AIPW estimate in one environment. Fails if the environment has only one
/// arm.
pub fn aipw_ate(env: &Environment, nuisances: &Nuisances) -> Result<f64> {
    let treated = env.treated_count();
    if treated == 0 || treated == env.n() {
        return Err(Error::Positivity(format!(
            "environment has {treated} treated of {} rows; both arms are required",
            env.n()
        )));
    }
    let xs = env.columns(&nuisances.subset);
    let mu0 = nuisances.mu0.predict(xs.view());
    let mu1 = nuisances.mu1.predict(xs.view());
    let pi = nuisances.propensity.predict(xs.view());
    aipw_from_predictions(env.t.view(), env.y.view(), mu0.view(), mu1.view(), pi.view())
}

/// Which rule picked the adjustment set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportNode {
    T,
    Y,
    #[serde(rename = "baseline")]
    Baseline,
}

impl From<InvariantNode> for ReportNode {
    fn from(n: InvariantNode) -> Self {
        match n {
            InvariantNode::T => ReportNode::T,
            InvariantNode::Y => ReportNode::Y,
        }
    }
}

impl fmt::Display for ReportNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportNode::T => "T",
            ReportNode::Y => "Y",
            ReportNode::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub estimates: Vec<f64>,
    pub subset: SubsetMask,
    pub node: ReportNode,
    pub truth: Option<Vec<f64>>,
    pub mae: Option<f64>,
}

impl AteReport {
    /// Attaches per-environment truths and computes the MAE.
    pub fn with_truth(mut self, truth: Vec<f64>) -> Result<Self> {
        self.mae = Some(crate::bench::mae(&self.estimates, &truth)?);
        self.truth = Some(truth);
        Ok(self)
    }

    /// CSV with header `env,estimate,truth,abs_error`; truth columns are
    /// empty when unknown.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "env,estimate,truth,abs_error")?;
        for (e, est) in self.estimates.iter().enumerate() {
            match self.truth.as_ref().map(|t| t[e]) {
                Some(t) => writeln!(out, "{e},{est},{t},{}", (est - t).abs())?,
                None => writeln!(out, "{e},{est},,")?,
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Estimates with the selected subset.
pub fn estimate(data: &MultiEnvDataset, selection: &SelectionResult) -> Result<AteReport> {
    estimate_with(data, &selection.subset, selection.node.into(), &NuisanceConfig::default())
}

/// Estimates with an arbitrary subset.
pub fn estimate_with(
    data: &MultiEnvDataset,
    subset: &SubsetMask,
    node: ReportNode,
    cfg: &NuisanceConfig,
) -> Result<AteReport> {
    let nuisances = pooled_nuisances_with(data, subset, cfg)?;
    let estimates = data
        .envs()
        .iter()
        .map(|env| aipw_ate(env, &nuisances))
        .collect::<Result<Vec<f64>>>()?;
    Ok(AteReport {
        estimates,
        subset: subset.clone(),
        node,
        truth: None,
        mae: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    AdjustAll,
    AdjustNone,
}

/// Adjusts for every covariate or for none.
pub fn baseline(data: &MultiEnvDataset, kind: Baseline) -> Result<AteReport> {
    let subset = match kind {
        Baseline::AdjustAll => SubsetMask::full(data.d()),
        Baseline::AdjustNone => SubsetMask::empty(),
    };
    estimate_with(data, &subset, ReportNode::Baseline, &NuisanceConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_residuals_give_plug_in() {
        let t = array![1.0, 0.0, 1.0];
        let y = array![3.0, 1.0, 3.0];
        let est = aipw_from_predictions(
            t.view(),
            y.view(),
            array![1.0, 1.0, 1.0].view(),
            array![3.0, 3.0, 3.0].view(),
            array![0.3, 0.6, 0.9].view(),
        )
        .unwrap();
        assert_eq!(est, 2.0);
    }

    #[test]
    fn four_row_hand_example() {
        // rows: 1 + 1/0.5·0.5 = 2, 1 − (0 − 0.5)/0.5 = 2, 1 + (−0.5)/0.5 = 0, 1 − 0.5/0.5 = 0
        let t = array![1.0, 0.0, 1.0, 0.0];
        let y = array![2.0, 0.0, 1.0, 1.0];
        let c = |v: f64| ndarray::Array1::from_elem(4, v);
        let est = aipw_from_predictions(t.view(), y.view(), c(0.5).view(), c(1.5).view(), c(0.5).view()).unwrap();
        assert_eq!(est, 1.0);
    }

    #[test]
    fn rejects_bad_propensity() {
        let v = array![1.0];
        assert!(aipw_from_predictions(v.view(), v.view(), v.view(), v.view(), array![1.0].view()).is_err());
    }
}
