use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::gate::{gate_from_noise, sigmoid};
use super::mlp::{MlpGrad, MlpModel};
use crate::error::{Error, Result};
use crate::invariance::studentize;

/// Output transform of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    /// Outcome regression.
    Identity,
    /// Propensity: `sigmoid(f(z))`.
    Logistic,
}

/// How the studentization denominator enters the loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Computed from the batch and differentiated through.
    Batch,
    /// Computed from the batch, constant in the gradient.
    Detached,
    /// A given constant.
    Fixed(f64),
}

/// Everything held fixed while differentiating one term.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedDraw {
    /// `(G₁, G₂)` per gate.
    pub noise: Vec<(f64, f64)>,
    pub tau: f64,
    /// Kernel bandwidth.
    pub sigma: f64,
    pub scale: ScaleMode,
}

impl FixedDraw {
    pub fn gates(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.noise)
            .map(|(&wj, &(g1, g2))| gate_from_noise(wj, g1, g2, self.tau))
            .collect()
    }
}

/// Value and gradients of one relaxed loss term `|stat| / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct TermGrad {
    pub loss: f64,
    pub statistic: f64,
    pub scale: f64,
    pub d_model: MlpGrad,
    pub d_logits: Vec<f64>,
}

/// Relaxed invariance term on a batch whose first half of rows forms split
/// `A` and second half split `B` (an odd trailing row is ignored).
///
/// Inputs are gated as `z = B(w) ⊙ x`; residuals are `target − link(f(z))`.
/// The bandwidth is a constant in the gradient.
pub fn relaxed_term(
    model: &MlpModel,
    link: Link,
    x: ArrayView2<f64>,
    target: &[f64],
    w: &[f64],
    draw: &FixedDraw,
) -> Result<TermGrad> {
    let q = x.ncols();
    if model.input_dim != q || w.len() != q || draw.noise.len() != q || target.len() != x.nrows() {
        return Err(Error::DimensionMismatch("relaxed term inputs disagree in shape".into()));
    }
    let half = x.nrows() / 2;
    if half < 2 {
        return Err(Error::InvalidInput(format!("relaxed term needs at least 4 rows, got {}", x.nrows())));
    }
    let rows = 2 * half;
    let width = model.width;
    let b = draw.gates(w);

    let mut z = vec![0.0; rows * q];
    for i in 0..rows {
        for k in 0..q {
            z[i * q + k] = b[k] * x[[i, k]];
        }
    }
    let mut hidden = vec![0.0; rows * width];
    let mut fitted = vec![0.0; rows];
    let mut delta = vec![0.0; rows];
    for i in 0..rows {
        let o = model.forward_row(&z[i * q..(i + 1) * q], &mut hidden[i * width..(i + 1) * width]);
        fitted[i] = match link {
            Link::Identity => o,
            Link::Logistic => sigmoid(o),
        };
        delta[i] = target[i] - fitted[i];
    }

    let gamma = 0.5 / (draw.sigma * draw.sigma);
    let mut kern = vec![0.0; half * half];
    for a in 0..half {
        for c in 0..half {
            let (za, zc) = (&z[a * q..(a + 1) * q], &z[(half + c) * q..(half + c + 1) * q]);
            let d2: f64 = za.iter().zip(zc).map(|(u, v)| (u - v) * (u - v)).sum();
            kern[a * half + c] = (-gamma * d2).exp();
        }
    }
    let m = rows as f64;
    let h: Vec<f64> = (0..half)
        .map(|a| {
            let s: f64 = (0..half).map(|c| kern[a * half + c] * delta[half + c]).sum();
            2.0 / m * delta[a] * s
        })
        .collect();
    let stud = studentize(&h);
    let statistic = stud.statistic;
    let floored = stud.standard_error < crate::invariance::MIN_STANDARD_ERROR;
    let scale = match draw.scale {
        ScaleMode::Fixed(s) => s,
        _ => stud.standard_error.max(crate::invariance::MIN_STANDARD_ERROR),
    };
    let loss = statistic.abs() / scale;

    let sign = if statistic > 0.0 {
        1.0
    } else if statistic < 0.0 {
        -1.0
    } else {
        0.0
    };
    // ∂loss/∂h_a; through the scale too unless it is fixed or floored
    let hf = half as f64;
    let g_h: Vec<f64> = h
        .iter()
        .map(|&ha| {
            let direct = sign / scale / hf;
            if draw.scale != ScaleMode::Batch || floored {
                direct
            } else {
                let d_se = (ha - statistic) / ((hf - 1.0) * hf * scale);
                direct - sign * statistic / (scale * scale) * d_se
            }
        })
        .collect();
    let inv_s2 = 1.0 / (draw.sigma * draw.sigma);
    let mut d_delta = vec![0.0; rows];
    let mut d_z = vec![0.0; rows * q];
    for a in 0..half {
        let g = g_h[a] * 2.0 / m;
        for c in 0..half {
            let j = half + c;
            let kv = kern[a * half + c];
            d_delta[a] += g * kv * delta[j];
            d_delta[j] += g * kv * delta[a];
            let coef = g * delta[a] * delta[j] * kv * inv_s2;
            for k in 0..q {
                let diff = z[a * q + k] - z[j * q + k];
                d_z[a * q + k] -= coef * diff;
                d_z[j * q + k] += coef * diff;
            }
        }
    }

    let mut d_model = MlpGrad::zeros(q, width);
    for i in 0..rows {
        let d_fitted = -d_delta[i];
        let d_out = match link {
            Link::Identity => d_fitted,
            Link::Logistic => d_fitted * fitted[i] * (1.0 - fitted[i]),
        };
        model.backward_row(
            &z[i * q..(i + 1) * q],
            &hidden[i * width..(i + 1) * width],
            d_out,
            &mut d_model,
            &mut d_z[i * q..(i + 1) * q],
        );
    }
    let d_logits = (0..q)
        .map(|k| {
            let d_gate: f64 = (0..rows).map(|i| d_z[i * q + k] * x[[i, k]]).sum();
            d_gate * b[k] * (1.0 - b[k]) / draw.tau
        })
        .collect();

    Ok(TermGrad {
        loss,
        statistic,
        scale,
        d_model,
        d_logits,
    })
}
