//! Repeated simulation experiments and MAE tables.
//!
//! Run `r` draws its data from `derive_seed(master_seed, r)`, so every method
//! sees the same samples. Failed runs are kept as rows with a reason.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Environment, MultiEnvDataset};
use crate::error::{Error, Result};
use crate::estimator::{self, AteReport, Baseline};
use crate::relax::{gumbel_select, hyperparameter_sweep, default_grid, TrainConfig};
use crate::scm::{sample_known_dag, sample_random_dag, sample_scm, true_ate, Invariance, KnownDagScenario, ShiftSpec};
use crate::search::{combinatorial_select_with, SearchConfig, SelectionResult};
use crate::seed;
use crate::subset::SubsetMask;

/// Mean absolute error between per-environment estimates and truths.
pub fn mae(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates but {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidInput("no environments".into()));
    }
    Ok(estimates.iter().zip(truths).map(|(e, t)| (e - t).abs()).sum::<f64>() / estimates.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Combinatorial,
    Gumbel,
    AdjustAll,
    AdjustNone,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Combinatorial, Method::Gumbel, Method::AdjustAll, Method::AdjustNone];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Combinatorial => "combinatorial",
            Method::Gumbel => "gumbel",
            Method::AdjustAll => "adjust_all",
            Method::AdjustNone => "adjust_none",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// Data-generating process of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSpec {
    /// The fixed five-block graph with a post-treatment column.
    KnownDag(KnownDagScenario),
    /// Erdős–Rényi graph redrawn every run.
    RandomDag {
        p: usize,
        density: f64,
        invariance: Invariance,
        epsilon: f64,
    },
    /// Randomized treatment with `Y = T + N(0, noise_sd²)` and no covariates.
    Randomized { noise_sd: f64 },
}

impl ScenarioSpec {
    /// Draws one dataset and its per-environment truths.
    pub fn sample(&self, n: usize, n_env: usize, seed: u64) -> Result<(MultiEnvDataset, Vec<f64>)> {
        match self {
            ScenarioSpec::KnownDag(s) => sample_known_dag(s, n, n_env, seed),
            ScenarioSpec::RandomDag {
                p,
                density,
                invariance,
                epsilon,
            } => {
                let dag = sample_random_dag(*p, *density, seed::derive_seed(seed, 0), *invariance)?;
                let shifts = ShiftSpec::random(&dag, *invariance, n_env, *epsilon, seed::derive_seed(seed, 1))?;
                let data = sample_scm(&dag, &shifts, n, seed::derive_seed(seed, 2))?;
                Ok((data, true_ate(&dag, n_env)?))
            }
            ScenarioSpec::Randomized { noise_sd } => {
                if !(*noise_sd >= 0.0) {
                    return Err(Error::InvalidInput("noise_sd must be >= 0".into()));
                }
                let envs = (0..n_env)
                    .map(|e| {
                        let mut rng = seed::child_rng(seed, e as u64);
                        let t: Array1<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
                        let y = t.mapv(|v| v + noise_sd * rng.sample::<f64, _>(StandardNormal));
                        Environment::new(Array2::zeros((n, 0)), t, y)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((MultiEnvDataset::from_envs(envs)?, vec![1.0; n_env]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub n: usize,
    pub n_env: usize,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub master_seed: u64,
    /// Cap on subset size for the combinatorial search.
    #[serde(default)]
    pub max_size: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Runs the full hyperparameter grid for the Gumbel method.
    #[serde(default)]
    pub sweep: bool,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioSpec, n: usize, n_env: usize, methods: Vec<Method>, runs: usize, master_seed: u64) -> Self {
        Self {
            scenario,
            n,
            n_env,
            methods,
            runs,
            master_seed,
            max_size: None,
            train: TrainConfig::default(),
            sweep: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidInput("runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("method list is empty".into()));
        }
        self.train.validate()
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        seed::derive_seed(self.master_seed, run as u64)
    }
}

/// One (method, run) outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub run: usize,
    pub seed: u64,
    pub subset: Option<SubsetMask>,
    pub estimates: Vec<f64>,
    pub truths: Vec<f64>,
    pub mae: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub completed: usize,
    pub failed: usize,
    pub mean_mae: f64,
    /// Sample standard deviation over completed runs divided by their
    /// square root.
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub config: ExperimentConfig,
    /// Ordered by (method, run).
    pub rows: Vec<RunRecord>,
    pub summary: Vec<MethodSummary>,
}

/// Mean and standard error of `values`; the error is 0 for one value.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

impl MaeReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &RunRecord> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// CSV with header `method,run,env,estimate,truth,abs_error`. Failed
    /// runs appear once with empty numeric fields.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "method,run,env,estimate,truth,abs_error")?;
        for r in &self.rows {
            if r.error.is_some() {
                writeln!(out, "{},{},,,,", r.method, r.run)?;
                continue;
            }
            for (e, (est, t)) in r.estimates.iter().zip(&r.truths).enumerate() {
                writeln!(out, "{},{},{e},{est},{t},{}", r.method, r.run, (est - t).abs())?;
            }
        }
        Ok(())
    }

    /// Aggregates, config echo and failure reasons.
    pub fn summary_json(&self) -> Result<String> {
        let failures: Vec<_> = self
            .rows
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| {
                    serde_json::json!({"method": r.method, "run": r.run, "reason": e})
                })
            })
            .collect();
        let doc = serde_json::json!({
            "config": self.config,
            "summary": self.summary,
            "failures": failures,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

fn select(cfg: &ExperimentConfig, method: Method, data: &MultiEnvDataset, run_seed: u64) -> Result<AteReport> {
    let selected = |sel: SelectionResult| estimator::estimate(data, &sel);
    match method {
        Method::AdjustAll => estimator::baseline(data, Baseline::AdjustAll),
        Method::AdjustNone => estimator::baseline(data, Baseline::AdjustNone),
        Method::Combinatorial => selected(combinatorial_select_with(data, &SearchConfig::new(cfg.max_size, run_seed))?),
        Method::Gumbel => {
            let mut train = cfg.train;
            train.seed = run_seed;
            train.invariance.seed = run_seed;
            if cfg.sweep {
                selected(hyperparameter_sweep(data, &train, &default_grid())?.selection)
            } else {
                selected(gumbel_select(data, &train)?)
            }
        }
    }
}

fn run_once(cfg: &ExperimentConfig, run: usize) -> Vec<RunRecord> {
    let run_seed = cfg.run_seed(run);
    let failed = |method: Method, e: &Error| RunRecord {
        method,
        run,
        seed: run_seed,
        subset: None,
        estimates: Vec::new(),
        truths: Vec::new(),
        mae: None,
        error: Some(e.to_string()),
    };
    let (data, truth) = match cfg.scenario.sample(cfg.n, cfg.n_env, run_seed) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("run {run}: sampling failed: {e}");
            return cfg.methods.iter().map(|&m| failed(m, &e)).collect();
        }
    };
    cfg.methods
        .iter()
        .map(|&method| match select(cfg, method, &data, run_seed).and_then(|r| r.with_truth(truth.clone())) {
            Ok(report) => RunRecord {
                method,
                run,
                seed: run_seed,
                subset: Some(report.subset),
                mae: report.mae,
                estimates: report.estimates,
                truths: truth.clone(),
                error: None,
            },
            Err(e) => {
                log::warn!("run {run}, method {method}: {e}");
                failed(method, &e)
            }
        })
        .collect()
}

/// Runs every method on every run and aggregates the MAE per method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MaeReport> {
    cfg.validate()?;
    let per_run: Vec<Vec<RunRecord>> = (0..cfg.runs).into_par_iter().map(|r| run_once(cfg, r)).collect();
    let mut rows = Vec::with_capacity(cfg.runs * cfg.methods.len());
    for &method in &cfg.methods {
        for run_rows in &per_run {
            rows.extend(run_rows.iter().filter(|r| r.method == method).cloned());
        }
    }
    let summary = cfg
        .methods
        .iter()
        .map(|&method| {
            let maes: Vec<f64> = rows.iter().filter(|r| r.method == method).filter_map(|r| r.mae).collect();
            let (mean_mae, standard_error) = mean_and_se(&maes);
            MethodSummary {
                method,
                completed: maes.len(),
                failed: cfg.runs - maes.len(),
                mean_mae,
                standard_error,
            }
        })
        .collect();
    Ok(MaeReport {
        config: cfg.clone(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!((mae(&[1.2, 0.8], &[1.0, 1.0]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(mae(&[3.0], &[1.0]).unwrap(), 2.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn se_of_constant_is_zero() {
        assert_eq!(mean_and_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        assert_eq!(mean_and_se(&[1.0, 3.0]), (2.0, 1.0));
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }
}
