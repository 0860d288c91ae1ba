use ndarray::{Array1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: usize = 32;

/// One hidden tanh layer: `f(z) = w2 · tanh(W1 z + b1) + b2`.
///
/// `w1` is row-major `width × input_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub width: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradients with the layout of [`MlpModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpGrad {
    pub fn zeros(input_dim: usize, width: usize) -> Self {
        Self {
            w1: vec![0.0; input_dim * width],
            b1: vec![0.0; width],
            w2: vec![0.0; width],
            b2: 0.0,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn add_scaled(&mut self, other: &MlpGrad, c: f64) {
        let axpy = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        axpy(&mut self.w1, &other.w1);
        axpy(&mut self.b1, &other.b1);
        axpy(&mut self.w2, &other.w2);
        self.b2 += c * other.b2;
    }
}

impl MlpModel {
    pub fn zeros(input_dim: usize, width: usize) -> Self {
        Self {
            input_dim,
            width,
            w1: vec![0.0; input_dim * width],
            b1: vec![0.0; width],
            w2: vec![0.0; width],
            b2: 0.0,
        }
    }

    /// Uniform fan-in initialization, zero biases.
    pub fn new<R: Rng>(input_dim: usize, width: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input_dim, width);
        let a1 = 1.0 / (input_dim.max(1) as f64).sqrt();
        let a2 = 1.0 / (width.max(1) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..a1));
        m.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..a2));
        m
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + 2 * self.width + 1
    }

    pub fn params(&self) -> Vec<f64> {
        MlpGrad {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2,
        }
        .flatten()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                p.len()
            )));
        }
        let (w1, rest) = p.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.width);
        let (w2, rest) = rest.split_at(self.width);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    /// Output for one input row; fills `hidden` with the tanh activations.
    pub fn forward_row(&self, z: &[f64], hidden: &mut [f64]) -> f64 {
        let q = self.input_dim;
        let mut out = self.b2;
        for k in 0..self.width {
            let row = &self.w1[k * q..(k + 1) * q];
            let pre = self.b1[k] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
            hidden[k] = pre.tanh();
            out += self.w2[k] * hidden[k];
        }
        out
    }

    pub fn forward(&self, z: ArrayView2<f64>) -> Result<Array1<f64>> {
        if z.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} inputs, got {}",
                self.input_dim,
                z.ncols()
            )));
        }
        let mut hidden = vec![0.0; self.width];
        Ok(z
            .rows()
            .into_iter()
            .map(|r| {
                let row: Vec<f64> = r.to_vec();
                self.forward_row(&row, &mut hidden)
            })
            .collect())
    }

    /// Accumulates `d_out · ∂f/∂θ` into `grad` and `d_out · ∂f/∂z` into
    /// `d_input`, given the activations from [`MlpModel::forward_row`].
    pub fn backward_row(&self, z: &[f64], hidden: &[f64], d_out: f64, grad: &mut MlpGrad, d_input: &mut [f64]) {
        let q = self.input_dim;
        grad.b2 += d_out;
        for k in 0..self.width {
            grad.w2[k] += d_out * hidden[k];
            let d_pre = d_out * self.w2[k] * (1.0 - hidden[k] * hidden[k]);
            grad.b1[k] += d_pre;
            let row = &self.w1[k * q..(k + 1) * q];
            let g_row = &mut grad.w1[k * q..(k + 1) * q];
            for j in 0..q {
                g_row[j] += d_pre * z[j];
                d_input[j] += d_pre * row[j];
            }
        }
    }

    /// `θ ← θ − lr · grad`.
    pub fn step(&mut self, grad: &MlpGrad, lr: f64) {
        let sub = |a: &mut [f64], g: &[f64]| a.iter_mut().zip(g).for_each(|(x, d)| *x -= lr * d);
        sub(&mut self.w1, &grad.w1);
        sub(&mut self.b1, &grad.b1);
        sub(&mut self.w2, &grad.w2);
        self.b2 -= lr * grad.b2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_output_bias() {
        let mut m = MlpModel::zeros(2, 4);
        m.b2 = 0.7;
        let out = m.forward(array![[1.0, 2.0], [-3.0, 0.5]].view()).unwrap();
        assert_eq!(out.to_vec(), vec![0.7, 0.7]);
    }

    #[test]
    fn zero_input_is_constant() {
        let m = MlpModel::new(3, 8, &mut crate::seed::rng(1));
        let out = m.forward(ndarray::Array2::zeros((5, 3)).view()).unwrap();
        assert!(out.iter().all(|v| *v == out[0]));
    }

    #[test]
    fn params_round_trip() {
        let m = MlpModel::new(3, 5, &mut crate::seed::rng(2));
        let mut z = MlpModel::zeros(3, 5);
        z.set_params(&m.params()).unwrap();
        assert_eq!(z, m);
        assert!(z.set_params(&[0.0]).is_err());
    }

    #[test]
    fn wrong_input_width() {
        assert!(MlpModel::zeros(2, 3).forward(array![[1.0]].view()).is_err());
    }
}
