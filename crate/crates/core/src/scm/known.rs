//! The fixed four-node-family benchmark: observed parents `X_p` of both
//! treatment and outcome, an environment-level latent `U`, and one
//! post-treatment column `X_c`.
//!
//! Per environment a latent vector `U ∈ R^{d+1}` is drawn once. Then, per
//! unit,
//!
//! ```text
//! X_p,i ~ N(U_i, v(U_i))                        i = 1..d-1
//! T     ~ Bernoulli(sigmoid(β_tᵀ X_p + ε_t))
//! Y     = T + β_yᵀ X_p + ε_y
//! X_c   = a·T + b·Y + ε_c,   ε_c ~ N(U_{d+1}, v(U_{d+1}))
//! ```
//!
//! `β_t, β_y ~ N(0, I)` are shared by all environments. An invariant node's
//! noise is `N(0, 1)`; a non-invariant node's noise is `N(U_d, v(U_d))`, so its
//! conditional mean moves with the environment. `(a, b)` is `(1, 1)` for a
//! collider, `(0, 1)` for a descendant of `Y` and `(0, 0)` for pure noise.
//! The treatment effect is 1 in every environment.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Environment, MultiEnvDataset};
use crate::error::{Error, Result};
use crate::seed;

/// Floor applied to `U²` noise variances in the standard heterogeneity law.
pub const VARIANCE_FLOOR: f64 = 0.25;

/// Which of treatment and outcome keep an environment-invariant conditional
/// mean given their observed parents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Invariance {
    #[serde(rename = "TY")]
    TY,
    #[serde(rename = "Y_only")]
    YOnly,
    #[serde(rename = "T_only")]
    TOnly,
    #[serde(rename = "none")]
    None,
}

impl Invariance {
    pub const ALL: [Invariance; 4] = [
        Invariance::TY,
        Invariance::YOnly,
        Invariance::TOnly,
        Invariance::None,
    ];

    pub fn t_invariant(self) -> bool {
        matches!(self, Invariance::TY | Invariance::TOnly)
    }

    pub fn y_invariant(self) -> bool {
        matches!(self, Invariance::TY | Invariance::YOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Invariance::TY => "TY",
            Invariance::YOnly => "Y_only",
            Invariance::TOnly => "T_only",
            Invariance::None => "none",
        }
    }
}

impl fmt::Display for Invariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Invariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Invariance::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown invariance '{s}' (expected TY, Y_only, T_only or none)"
                ))
            })
    }
}

/// Role of the post-treatment column `X_c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostKind {
    Collider,
    Descendant,
    Noise,
}

impl PostKind {
    pub const ALL: [PostKind; 3] = [PostKind::Collider, PostKind::Descendant, PostKind::Noise];

    /// Coefficients `(a, b)` of `T` and `Y` in the equation of `X_c`.
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            PostKind::Collider => (1.0, 1.0),
            PostKind::Descendant => (0.0, 1.0),
            PostKind::Noise => (0.0, 0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PostKind::Collider => "collider",
            PostKind::Descendant => "descendant",
            PostKind::Noise => "noise",
        }
    }
}

impl fmt::Display for PostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PostKind::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown post-treatment kind '{s}' (expected collider, descendant or noise)"
                ))
            })
    }
}

/// How the environment latent `U` and the noise variances are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law", content = "epsilon")]
pub enum Heterogeneity {
    /// `U ~ N(0, I)`, variances `max(U², 0.25)`.
    #[default]
    Standard,
    /// `U ~ N(0, ε² I)`, variances `0.5 + U²`. With `ε = 0` every environment
    /// has the same distribution.
    Scaled(f64),
}

impl Heterogeneity {
    fn latent_scale(self) -> f64 {
        match self {
            Heterogeneity::Standard => 1.0,
            Heterogeneity::Scaled(eps) => eps,
        }
    }

    fn variance(self, u: f64) -> f64 {
        match self {
            Heterogeneity::Standard => (u * u).max(VARIANCE_FLOOR),
            Heterogeneity::Scaled(_) => 0.5 + u * u,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownDagScenario {
    pub invariance: Invariance,
    pub post_kind: PostKind,
    /// Observed covariate count: `d - 1` parents plus the post-treatment column.
    pub d: usize,
    #[serde(default)]
    pub heterogeneity: Heterogeneity,
}

impl KnownDagScenario {
    pub fn new(invariance: Invariance, post_kind: PostKind, d: usize) -> Self {
        Self {
            invariance,
            post_kind,
            d,
            heterogeneity: Heterogeneity::Standard,
        }
    }

    /// The heterogeneity-controlled variant with latent scale `epsilon`.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.heterogeneity = Heterogeneity::Scaled(epsilon);
        self
    }

    /// Dimension of the environment latent `U`.
    pub fn unobserved_dim(&self) -> usize {
        self.d + 1
    }

    /// Columns holding the parents `X_p`.
    pub fn parent_columns(&self) -> Vec<usize> {
        (0..self.d.saturating_sub(1)).collect()
    }

    /// Column holding `X_c`.
    pub fn post_column(&self) -> usize {
        self.d - 1
    }

    /// The 3×3 invariance/post-kind grid followed by the three no-invariance
    /// ablations.
    pub fn grid(d: usize) -> Vec<KnownDagScenario> {
        Invariance::ALL
            .into_iter()
            .flat_map(|inv| PostKind::ALL.into_iter().map(move |pk| Self::new(inv, pk, d)))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidInput(format!(
                "known-DAG scenario needs d >= 2, got {}",
                self.d
            )));
        }
        if let Heterogeneity::Scaled(eps) = self.heterogeneity {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "heterogeneity scale must be finite and >= 0, got {eps}"
                )));
            }
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn normal<R: Rng>(rng: &mut R, mean: f64, variance: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + variance.sqrt() * z
}

/// Draws `n` units in each of `n_env` environments. Returns the data and the
/// per-environment true ATE (always 1).
pub fn sample_known_dag(
    scenario: &KnownDagScenario,
    n: usize,
    n_env: usize,
    seed: u64,
) -> Result<(MultiEnvDataset, Vec<f64>)> {
    scenario.validate()?;
    if n < 10 {
        return Err(Error::InvalidInput(format!("need n >= 10 units per environment, got {n}")));
    }
    if n_env < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 environments, got {n_env}")));
    }
    let d = scenario.d;
    let parents = d - 1;
    let het = scenario.heterogeneity;
    let (a, b) = scenario.post_kind.coefficients();

    let mut rng = seed::rng(seed);
    let beta_t: Vec<f64> = (0..parents).map(|_| rng.sample(StandardNormal)).collect();
    let beta_y: Vec<f64> = (0..parents).map(|_| rng.sample(StandardNormal)).collect();

    let mut envs = Vec::with_capacity(n_env);
    for e in 0..n_env {
        let mut rng = seed::child_rng(seed, e as u64 + 1);
        let u: Vec<f64> = (0..=d)
            .map(|_| het.latent_scale() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let shifted = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| normal(rng, u[k], het.variance(u[k]));

        let mut x = Array2::zeros((n, d));
        let mut t = Array1::zeros(n);
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let mut lin_t = 0.0;
            let mut lin_y = 0.0;
            for k in 0..parents {
                let v = shifted(&mut rng, k);
                x[[i, k]] = v;
                lin_t += beta_t[k] * v;
                lin_y += beta_y[k] * v;
            }
            let eps_t = if scenario.invariance.t_invariant() {
                normal(&mut rng, 0.0, 1.0)
            } else {
                shifted(&mut rng, parents)
            };
            let p = sigmoid(lin_t + eps_t);
            let ti = if Bernoulli::new(p).expect("probability").sample(&mut rng) {
                1.0
            } else {
                0.0
            };
            let eps_y = if scenario.invariance.y_invariant() {
                normal(&mut rng, 0.0, 1.0)
            } else {
                shifted(&mut rng, parents)
            };
            let yi = ti + lin_y + eps_y;
            let eps_c = shifted(&mut rng, d);
            x[[i, d - 1]] = a * ti + b * yi + eps_c;
            t[i] = ti;
            y[i] = yi;
        }
        envs.push(Environment::new(x, t, y)?);
    }
    Ok((MultiEnvDataset::from_envs(envs)?, vec![1.0; n_env]))
}
