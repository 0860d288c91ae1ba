//! Pooled nuisance regressions: per-arm outcome means `μ_t(X_S)` by ridge
//! regression and the propensity `π(X_S)` by ridge-penalized logistic
//! regression. Intercepts are never penalized.
//!
//! Nuisances are fitted once on all environments stacked together; there is
//! no cross-fitting.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiEnvDataset;
use crate::error::{Error, Result};
use crate::subset::SubsetMask;

pub const DEFAULT_LAMBDA: f64 = 1e-3;
/// Smallest ridge penalty actually used, keeping the normal equations solvable.
pub const MIN_RIDGE_LAMBDA: f64 = 1e-8;
/// Propensity predictions are clipped to this interval.
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ridge_lambda: f64,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, row)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.intercept + r.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ridge_lambda: f64,
    pub clip: (f64, f64),
    /// Euclidean norm of the penalized log-likelihood gradient at the
    /// returned parameters.
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_unclipped_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.intercept + dot(&self.coefficients, row))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_unclipped_row(row).clamp(self.clip.0, self.clip.1)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                let z = self.intercept + r.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>();
                sigmoid(z).clamp(self.clip.0, self.clip.1)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(&b));
    }
    a.lu().solve(&b)
}

/// Minimizes `‖y − Xβ − b‖² + λ‖β‖²` in closed form, with `λ` floored at
/// [`MIN_RIDGE_LAMBDA`].
pub fn fit_ridge(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<LinearModel> {
    let (n, q) = x.dim();
    if n == 0 {
        return Err(Error::InvalidInput("ridge regression needs at least one row".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("x has {n} rows, y has {}", y.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let lambda_eff = lambda.max(MIN_RIDGE_LAMBDA);
    let y_mean = y.mean().expect("non-empty");
    if q == 0 {
        return Ok(LinearModel {
            coefficients: Vec::new(),
            intercept: y_mean,
            ridge_lambda: lambda,
        });
    }
    let x_mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    let mut centered = vec![0.0; q];
    for (row, &yi) in x.rows().into_iter().zip(y.iter()) {
        for k in 0..q {
            centered[k] = row[k] - x_mean[k];
        }
        let yc = yi - y_mean;
        for a in 0..q {
            rhs[a] += centered[a] * yc;
            for b in 0..=a {
                gram[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
        gram[(a, a)] += lambda_eff;
    }
    let beta = solve_spd(gram, rhs)
        .ok_or_else(|| Error::InvalidInput("ridge normal equations are singular".into()))?;
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - dot(&coefficients, x_mean.as_slice().expect("contiguous"));
    Ok(LinearModel {
        coefficients,
        intercept,
        ridge_lambda: lambda,
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Ridge-penalized logistic regression by Newton/IRLS with step halving.
///
/// Maximizes `Σ [t·z − log(1 + e^z)] − (λ/2)‖β‖²` with `z = b + xᵀβ`. Stops
/// when the gradient norm per row drops below 1e-8 or after 100 iterations. With
/// fewer than two rows or a single observed class the model is
/// intercept-only at the clipped class frequency.
pub fn fit_logistic(x: ArrayView2<f64>, t: ArrayView1<f64>, lambda: f64) -> Result<LogisticModel> {
    let (n, q) = x.dim();
    if t.len() != n {
        return Err(Error::DimensionMismatch(format!("x has {n} rows, t has {}", t.len())));
    }
    if let Some(v) = t.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::InvalidInput(format!("treatment value {v} is not 0 or 1")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("penalty must be >= 0, got {lambda}")));
    }
    let clip = PROPENSITY_CLIP;
    let treated = t.sum();
    if n < 2 || treated == 0.0 || treated == n as f64 {
        let rate = if n == 0 { 0.5 } else { treated / n as f64 };
        return Ok(LogisticModel {
            coefficients: vec![0.0; q],
            intercept: logit(rate.clamp(clip.0, clip.1)),
            ridge_lambda: lambda,
            clip,
            gradient_norm: 0.0,
            iterations: 0,
        });
    }

    let dim = q + 1;
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut params = DVector::<f64>::zeros(dim);
    params[0] = logit(treated / n as f64);

    let linear = |params: &DVector<f64>, row: &[f64]| {
        params[0] + row.iter().enumerate().map(|(k, v)| params[k + 1] * v).sum::<f64>()
    };
    let objective = |params: &DVector<f64>| {
        let mut ll = 0.0;
        for (row, &ti) in rows.iter().zip(t.iter()) {
            let z = linear(params, row);
            // log(1 + e^z) computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            ll += ti * z - softplus;
        }
        let penalty: f64 = params.iter().skip(1).map(|b| b * b).sum();
        ll - 0.5 * lambda * penalty
    };
    let gradient_and_hessian = |params: &DVector<f64>| {
        let mut g = DVector::<f64>::zeros(dim);
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut xa = vec![1.0; dim];
        for (row, &ti) in rows.iter().zip(t.iter()) {
            xa[1..].copy_from_slice(row);
            let p = sigmoid(linear(params, row));
            let w = p * (1.0 - p);
            for a in 0..dim {
                g[a] += xa[a] * (ti - p);
                for b in 0..=a {
                    h[(a, b)] += w * xa[a] * xa[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for k in 1..dim {
            g[k] -= lambda * params[k];
            h[(k, k)] += lambda;
        }
        (g, h)
    };

    let mut current = objective(&params);
    let (mut grad, mut hess) = gradient_and_hessian(&params);
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER && grad.norm() > IRLS_TOLERANCE * n as f64 {
        iterations += 1;
        // jitter keeps the Newton system solvable on (near) separable data
        for a in 0..dim {
            hess[(a, a)] += 1e-12;
        }
        let Some(step) = solve_spd(hess.clone(), grad.clone()) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &params + &step * scale;
            let value = objective(&candidate);
            if value.is_finite() && value >= current {
                params = candidate;
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let (g, h) = gradient_and_hessian(&params);
        grad = g;
        hess = h;
        if !accepted {
            break;
        }
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("logistic regression produced non-finite parameters".into()));
    }
    Ok(LogisticModel {
        coefficients: params.iter().skip(1).copied().collect(),
        intercept: params[0],
        ridge_lambda: lambda,
        clip,
        gradient_norm: grad.norm(),
        iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceConfig {
    pub ridge_lambda: f64,
    pub logistic_lambda: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: DEFAULT_LAMBDA,
            logistic_lambda: DEFAULT_LAMBDA,
        }
    }
}

/// Outcome models per arm and the propensity model, all on columns `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nuisances {
    pub subset: SubsetMask,
    pub mu0: LinearModel,
    pub mu1: LinearModel,
    pub propensity: LogisticModel,
}

impl Nuisances {
    pub fn mu(&self, arm: u8) -> &LinearModel {
        if arm == 1 {
            &self.mu1
        } else {
            &self.mu0
        }
    }
}

/// [`pooled_nuisances_with`] using the default penalties.
pub fn pooled_nuisances(data: &MultiEnvDataset, subset: &SubsetMask) -> Result<Nuisances> {
    pooled_nuisances_with(data, subset, &NuisanceConfig::default())
}

/// Fits `μ_1` on pooled treated rows, `μ_0` on pooled control rows and `π`
/// on all pooled rows, each restricted to the columns in `subset`.
pub fn pooled_nuisances_with(
    data: &MultiEnvDataset,
    subset: &SubsetMask,
    cfg: &NuisanceConfig,
) -> Result<Nuisances> {
    subset.check_within(data.d())?;
    let pooled = data.pooled();
    let xs = pooled.columns(subset);
    let treated = pooled.arm_rows(1);
    let control = pooled.arm_rows(0);
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Positivity(format!(
            "pooled sample has {} treated and {} control rows; both arms are required",
            treated.len(),
            control.len()
        )));
    }
    let fit_arm = |rows: &[usize]| {
        let x = xs.select(ndarray::Axis(0), rows);
        let y = pooled.y.select(ndarray::Axis(0), rows);
        fit_ridge(x.view(), y.view(), cfg.ridge_lambda)
    };
    Ok(Nuisances {
        subset: subset.clone(),
        mu0: fit_arm(&control)?,
        mu1: fit_arm(&treated)?,
        propensity: fit_logistic(xs.view(), pooled.t.view(), cfg.logistic_lambda)?,
    })
}
