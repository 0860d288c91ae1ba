use rand::Rng;
use rand_distr::Gumbel;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid((w + g1 - g2) / tau)`.
pub fn gate_from_noise(w: f64, g1: f64, g2: f64, tau: f64) -> f64 {
    sigmoid((w + g1 - g2) / tau)
}

/// Gumbel noise pairs `(G₁, G₂)` for `dim` gates.
pub fn gumbel_noise<R: Rng>(dim: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    (0..dim).map(|_| (rng.sample(g), rng.sample(g))).collect()
}

/// One relaxed Bernoulli mask `B_j = sigmoid((w_j + G₁ − G₂)/τ)`.
pub fn gumbel_gate_sample<R: Rng>(w: &[f64], tau: f64, rng: &mut R) -> Vec<f64> {
    let noise = gumbel_noise(w.len(), rng);
    w.iter()
        .zip(noise)
        .map(|(&wj, (g1, g2))| gate_from_noise(wj, g1, g2, tau))
        .collect()
}

/// Gate logits with their current temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateVector {
    pub logits: Vec<f64>,
    pub tau: f64,
}

impl GateVector {
    pub fn new(logits: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
        }
        if logits.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("gate logits must be finite".into()));
        }
        Ok(Self { logits, tau })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        gumbel_gate_sample(&self.logits, self.tau, rng)
    }

    /// Columns with a positive logit.
    pub fn selected(&self) -> Vec<usize> {
        self.logits
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}
