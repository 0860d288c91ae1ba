//! Kernelized invariance losses.
//!
//! For a node `V ∈ {T, Y}` and covariate subset `S`, the residual
//! `δ = V − μ̄_S(X)` uses the conditional mean fitted on the pooled data. If
//! that conditional mean is the same in every environment, `E_e[δ k(X_S, X'_S) δ']`
//! vanishes in each environment `e`. It is estimated per environment with the
//! cross U-statistic: split the sample into halves `A` and `B` of size `m/2`,
//!
//! ```text
//! h_i  = (2/m) Σ_{j∈B} δ_i k(X_i, X_j) δ_j     for i ∈ A
//! stat = (2/m) Σ_{i∈A} h_i
//! ```
//!
//! and studentize by the standard error of the mean of `h`,
//! `sd(h) / sqrt(m/2)`. The outcome loss is computed separately within each
//! treatment arm, and the two arm losses are combined with a max.
//!
//! Rankings use absolute studentized values.

use std::fmt;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiEnvDataset;
use crate::error::{Error, Result};
use crate::kernel::{median_bandwidth, KernelConfig, DEFAULT_SUBSAMPLE_CAP};
use crate::nuisance::{pooled_nuisances_with, LinearModel, LogisticModel, NuisanceConfig, Nuisances};
use crate::seed;
use crate::subset::SubsetMask;

/// Studentized values above this in absolute value flag non-invariance in
/// diagnostics. Selection never uses it.
pub const NULL_THRESHOLD: f64 = 3.0;
/// Floor on the standard error used for studentization.
pub const MIN_STANDARD_ERROR: f64 = 1e-12;
/// Minimum rows for a cross U-statistic (two per half).
pub const MIN_STAT_ROWS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeVariant {
    T,
    Y0,
    Y1,
}

impl NodeVariant {
    fn stream(self) -> u64 {
        match self {
            NodeVariant::T => 0,
            NodeVariant::Y0 => 1,
            NodeVariant::Y1 => 2,
        }
    }
}

impl fmt::Display for NodeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeVariant::T => "T",
            NodeVariant::Y0 => "Y0",
            NodeVariant::Y1 => "Y1",
        })
    }
}

/// The node whose invariance a selection relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InvariantNode {
    T,
    Y,
}

impl fmt::Display for InvariantNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvariantNode::T => "T",
            InvariantNode::Y => "Y",
        })
    }
}

/// How per-environment losses are reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Worst environment.
    Max,
    /// Environment average.
    Mean,
}

/// Residuals `δ` with the features the kernel sees.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVector {
    pub values: Array1<f64>,
    pub features: Array2<f64>,
}

impl ResidualVector {
    pub fn new(values: Array1<f64>, features: Array2<f64>) -> Result<Self> {
        if values.len() != features.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} residuals but {} feature rows",
                values.len(),
                features.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("residuals must be finite".into()));
        }
        Ok(Self { values, features })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossUStatistic {
    pub statistic: f64,
    pub studentized: f64,
    pub standard_error: f64,
}

/// Seeded split of `0..n` into two halves of `n/2`; with odd `n` the last
/// shuffled index is dropped.
pub fn half_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let half = n / 2;
    let second = idx[half..2 * half].to_vec();
    idx.truncate(half);
    (idx, second)
}

/// Cross U-statistic with a seeded half split.
pub fn cross_u_statistic(residuals: &ResidualVector, kern: &KernelConfig, seed: u64) -> Result<CrossUStatistic> {
    let n = residuals.values.len();
    if n < MIN_STAT_ROWS {
        return Err(Error::InvalidInput(format!(
            "cross U-statistic needs at least {MIN_STAT_ROWS} rows, got {n}"
        )));
    }
    let (first, second) = half_split(n, seed);
    cross_u_statistic_split(
        residuals.values.as_slice().expect("contiguous"),
        residuals.features.view(),
        kern.bandwidth,
        &first,
        &second,
    )
}

/// Cross U-statistic for an explicit split. `first` and `second` must have
/// the same length of at least 2.
pub fn cross_u_statistic_split(
    values: &[f64],
    features: ArrayView2<f64>,
    sigma: f64,
    first: &[usize],
    second: &[usize],
) -> Result<CrossUStatistic> {
    let half = first.len();
    if half < 2 || second.len() != half {
        return Err(Error::InvalidInput(format!(
            "halves must have equal size >= 2, got {} and {}",
            first.len(),
            second.len()
        )));
    }
    if features.nrows() != values.len() {
        return Err(Error::DimensionMismatch("residuals and features differ in length".into()));
    }
    let q = features.ncols();
    let m = (2 * half) as f64;
    let gamma = 0.5 / (sigma * sigma);

    let pack = |rows: &[usize]| -> Vec<f64> {
        let mut buf = Vec::with_capacity(rows.len() * q);
        for &r in rows {
            buf.extend(features.row(r).iter());
        }
        buf
    };
    let a = pack(first);
    let b = pack(second);
    let delta_b: Vec<f64> = second.iter().map(|&j| values[j]).collect();

    let h: Vec<f64> = if q == 0 {
        let total: f64 = delta_b.iter().sum();
        first.iter().map(|&i| 2.0 / m * values[i] * total).collect()
    } else {
        first
            .iter()
            .enumerate()
            .map(|(ai, &i)| {
                let xi = &a[ai * q..(ai + 1) * q];
                let mut acc = 0.0;
                for (xj, dj) in b.chunks_exact(q).zip(&delta_b) {
                    let d2: f64 = xi.iter().zip(xj).map(|(u, v)| (u - v) * (u - v)).sum();
                    acc += (-gamma * d2).exp() * dj;
                }
                2.0 / m * values[i] * acc
            })
            .collect()
    };
    Ok(studentize(&h))
}

/// Statistic and studentized value from the `h` terms.
pub(crate) fn studentize(h: &[f64]) -> CrossUStatistic {
    let half = h.len() as f64;
    let statistic = h.iter().sum::<f64>() / half;
    let var = h.iter().map(|v| (v - statistic).powi(2)).sum::<f64>() / (half - 1.0);
    let standard_error = (var / half).sqrt();
    CrossUStatistic {
        statistic,
        studentized: statistic / standard_error.max(MIN_STANDARD_ERROR),
        standard_error,
    }
}

/// One per-environment loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub subset: SubsetMask,
    pub variant: NodeVariant,
    pub env: usize,
    pub statistic: f64,
    pub studentized: f64,
}

/// Settings shared by all loss evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    pub aggregation: Aggregation,
    /// Point cap for the median bandwidth heuristic.
    pub subsample_cap: usize,
    /// Drives half splits and bandwidth subsampling.
    pub seed: u64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Max,
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            seed: 0,
        }
    }
}

impl InvarianceConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Kernel for `subset`: median distance on the pooled columns `S`.
    pub fn kernel_for(&self, data: &MultiEnvDataset, subset: &SubsetMask) -> KernelConfig {
        let pooled = data.pooled_columns(subset);
        KernelConfig {
            bandwidth: median_bandwidth(pooled.view(), self.subsample_cap, seed::derive_seed(self.seed, 0)),
            subsample_cap: self.subsample_cap,
        }
    }

    /// Split seed of `(env, variant)`; the same for every subset.
    pub fn split_seed(&self, env: usize, variant: NodeVariant) -> u64 {
        seed::derive_seed(seed::derive_seed(self.seed, env as u64 + 1), variant.stream())
    }
}

/// Reduces absolute studentized values.
pub fn aggregate<I: IntoIterator<Item = f64>>(values: I, mode: Aggregation) -> f64 {
    let mut count = 0usize;
    let mut acc = match mode {
        Aggregation::Max => f64::NEG_INFINITY,
        Aggregation::Mean => 0.0,
    };
    for v in values {
        count += 1;
        match mode {
            Aggregation::Max => acc = acc.max(v.abs()),
            Aggregation::Mean => acc += v.abs(),
        }
    }
    match (mode, count) {
        (_, 0) => f64::NAN,
        (Aggregation::Max, _) => acc,
        (Aggregation::Mean, c) => acc / c as f64,
    }
}

/// Per-environment treatment losses with residuals `T − π̂(X_S)`.
pub fn t_entries(
    data: &MultiEnvDataset,
    subset: &SubsetMask,
    propensity: &LogisticModel,
    kern: &KernelConfig,
    cfg: &InvarianceConfig,
) -> Result<Vec<LossEntry>> {
    data.envs()
        .iter()
        .enumerate()
        .map(|(e, env)| {
            let xs = env.columns(subset);
            let pred = propensity.predict(xs.view());
            let res = ResidualVector::new(&env.t - &pred, xs)?;
            let stat = cross_u_statistic(&res, kern, cfg.split_seed(e, NodeVariant::T))?;
            Ok(LossEntry {
                subset: subset.clone(),
                variant: NodeVariant::T,
                env: e,
                statistic: stat.statistic,
                studentized: stat.studentized,
            })
        })
        .collect()
}

/// Per-environment, per-arm outcome losses with residuals `Y − μ̂_t(X_S)`
/// on the rows with `T = t`.
pub fn y_entries(
    data: &MultiEnvDataset,
    subset: &SubsetMask,
    mu0: &LinearModel,
    mu1: &LinearModel,
    kern: &KernelConfig,
    cfg: &InvarianceConfig,
) -> Result<Vec<LossEntry>> {
    let mut out = Vec::with_capacity(2 * data.n_envs());
    for (e, env) in data.envs().iter().enumerate() {
        for (arm, model, variant) in [(0u8, mu0, NodeVariant::Y0), (1u8, mu1, NodeVariant::Y1)] {
            let rows = env.arm_rows(arm);
            if rows.len() < MIN_STAT_ROWS {
                return Err(Error::InsufficientArm {
                    env: e,
                    arm,
                    rows: rows.len(),
                    required: MIN_STAT_ROWS,
                });
            }
            let xs = env.columns(subset).select(Axis(0), &rows);
            let y = env.y.select(Axis(0), &rows);
            let res = ResidualVector::new(&y - &model.predict(xs.view()), xs)?;
            let stat = cross_u_statistic(&res, kern, cfg.split_seed(e, variant))?;
            out.push(LossEntry {
                subset: subset.clone(),
                variant,
                env: e,
                statistic: stat.statistic,
                studentized: stat.studentized,
            });
        }
    }
    Ok(out)
}

/// Aggregated treatment loss `J_S(T)`.
pub fn loss_t(
    data: &MultiEnvDataset,
    subset: &SubsetMask,
    propensity: &LogisticModel,
    mode: Aggregation,
    cfg: &InvarianceConfig,
) -> Result<f64> {
    let kern = cfg.kernel_for(data, subset);
    let entries = t_entries(data, subset, propensity, &kern, cfg)?;
    Ok(aggregate(entries.iter().map(|e| e.studentized), mode))
}

/// Aggregated outcome loss `J_S(Y) = max(J_S(Y0), J_S(Y1))`, each arm
/// aggregated over environments first.
pub fn loss_y(
    data: &MultiEnvDataset,
    subset: &SubsetMask,
    mu0: &LinearModel,
    mu1: &LinearModel,
    mode: Aggregation,
    cfg: &InvarianceConfig,
) -> Result<f64> {
    let kern = cfg.kernel_for(data, subset);
    let entries = y_entries(data, subset, mu0, mu1, &kern, cfg)?;
    Ok(y_from_entries(&entries, mode).0)
}

fn y_from_entries(entries: &[LossEntry], mode: Aggregation) -> (f64, f64, f64) {
    let arm = |v: NodeVariant| {
        aggregate(
            entries.iter().filter(|e| e.variant == v).map(|e| e.studentized),
            mode,
        )
    };
    let (y0, y1) = (arm(NodeVariant::Y0), arm(NodeVariant::Y1));
    (y0.max(y1), y0, y1)
}

/// `min(J_T, J_Y)` and the node attaining it; ties go to `Y`.
pub fn combine(j_t: f64, j_y: f64) -> (f64, InvariantNode) {
    if j_t < j_y {
        (j_t, InvariantNode::T)
    } else {
        (j_y, InvariantNode::Y)
    }
}

/// The combined objective of one subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub subset: SubsetMask,
    pub j_t: f64,
    pub j_y: f64,
    pub j_y0: f64,
    pub j_y1: f64,
    pub combined: f64,
    pub node: InvariantNode,
    pub entries: Vec<LossEntry>,
}

impl Objective {
    fn from_entries(subset: SubsetMask, entries: Vec<LossEntry>, mode: Aggregation) -> Self {
        let j_t = aggregate(
            entries.iter().filter(|e| e.variant == NodeVariant::T).map(|e| e.studentized),
            mode,
        );
        let (j_y, j_y0, j_y1) = y_from_entries(&entries, mode);
        let (combined, node) = combine(j_t, j_y);
        Self {
            subset,
            j_t,
            j_y,
            j_y0,
            j_y1,
            combined,
            node,
            entries,
        }
    }
}

/// Objective of `nuisances.subset` with already fitted nuisances.
pub fn objective(data: &MultiEnvDataset, nuisances: &Nuisances, cfg: &InvarianceConfig) -> Result<Objective> {
    let subset = &nuisances.subset;
    let kern = cfg.kernel_for(data, subset);
    let mut entries = t_entries(data, subset, &nuisances.propensity, &kern, cfg)?;
    entries.extend(y_entries(data, subset, &nuisances.mu0, &nuisances.mu1, &kern, cfg)?);
    Ok(Objective::from_entries(subset.clone(), entries, cfg.aggregation))
}

/// Fits pooled nuisances on `subset` and evaluates its objective.
pub fn evaluate_subset(
    data: &MultiEnvDataset,
    subset: &SubsetMask,
    cfg: &InvarianceConfig,
    nuisance: &NuisanceConfig,
) -> Result<Objective> {
    let fitted = pooled_nuisances_with(data, subset, nuisance)?;
    objective(data, &fitted, cfg)
}

/// All per-environment losses of the evaluated subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub aggregation: Aggregation,
    pub entries: Vec<LossEntry>,
}

impl LossTable {
    pub fn new(aggregation: Aggregation) -> Self {
        Self {
            aggregation,
            entries: Vec::new(),
        }
    }

    pub fn contains(&self, subset: &SubsetMask) -> bool {
        self.entries.iter().any(|e| &e.subset == subset)
    }

    /// Recomputes the objective of `subset` from the stored entries.
    pub fn objective_for(&self, subset: &SubsetMask) -> Option<Objective> {
        let entries: Vec<LossEntry> = self
            .entries
            .iter()
            .filter(|e| &e.subset == subset)
            .cloned()
            .collect();
        if entries.is_empty() {
            return None;
        }
        Some(Objective::from_entries(subset.clone(), entries, self.aggregation))
    }

    /// CSV with header `subset,node,env,statistic,studentized`; subsets are
    /// written as `{i;j;…}`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "subset,node,env,statistic,studentized")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.subset, e.variant, e.env, e.statistic, e.studentized
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_residuals_give_zero() {
        let res = ResidualVector::new(Array1::zeros(10), Array2::ones((10, 2))).unwrap();
        let s = cross_u_statistic(&res, &KernelConfig::new(1.0).unwrap(), 3).unwrap();
        assert_eq!(s.statistic, 0.0);
        assert_eq!(s.studentized, 0.0);
    }

    #[test]
    fn hand_computed_four_points() {
        // constant kernel (no features), identity split {0,1} | {2,3}
        let values = [1.0, -1.0, 1.0, -1.0];
        let features = Array2::<f64>::zeros((4, 0));
        let s = cross_u_statistic_split(&values, features.view(), 1.0, &[0, 1], &[2, 3]).unwrap();
        assert_eq!(s.statistic, 0.0);
    }

    #[test]
    fn hand_computed_with_kernel() {
        // h_0 = (2/4)·1·(k(0,2)·2 + k(0,3)·1), h_1 = (2/4)·3·(k(1,2)·2 + k(1,3)·1)
        let values = [1.0, 3.0, 2.0, 1.0];
        let features = array![[0.0], [1.0], [0.0], [2.0]];
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / 2.0).exp();
        let h0 = 0.5 * (k(0.0, 0.0) * 2.0 + k(0.0, 2.0));
        let h1 = 0.5 * 3.0 * (k(1.0, 0.0) * 2.0 + k(1.0, 2.0));
        let s = cross_u_statistic_split(&values, features.view(), 1.0, &[0, 1], &[2, 3]).unwrap();
        assert_abs_diff_eq!(s.statistic, 0.5 * (h0 + h1), epsilon = 1e-15);
        let se = ((h0 - h1).abs() / 2.0_f64.sqrt()) / 2.0_f64.sqrt();
        assert_abs_diff_eq!(s.standard_error, se, epsilon = 1e-15);
    }

    #[test]
    fn too_few_rows() {
        let res = ResidualVector::new(array![1.0, 2.0, 3.0], Array2::zeros((3, 1))).unwrap();
        assert!(cross_u_statistic(&res, &KernelConfig::new(1.0).unwrap(), 0).is_err());
    }

    #[test]
    fn odd_split_drops_one() {
        let (a, b) = half_split(7, 1);
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 3);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 6);
        assert_eq!(half_split(7, 1), half_split(7, 1));
    }

    #[test]
    fn combine_prefers_y_on_ties() {
        assert_eq!(combine(0.5, 2.0), (0.5, InvariantNode::T));
        assert_eq!(combine(1.0, 1.0), (1.0, InvariantNode::Y));
    }

    #[test]
    fn aggregation_modes() {
        assert_eq!(aggregate([1.0, -3.0, 2.0], Aggregation::Max), 3.0);
        assert_eq!(aggregate([1.0, -3.0, 2.0], Aggregation::Mean), 2.0);
        assert!(aggregate(Vec::<f64>::new(), Aggregation::Max).is_nan());
    }
}
