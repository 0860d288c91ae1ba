//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use ramen::relax::{relaxed_term, FixedDraw, Link, MlpModel};

/// Brute-force cross U-statistic: materializes the full Gram matrix and
/// evaluates the double sum literally. Returns (statistic, studentized).
pub fn brute_cross_u(
    values: &[f64],
    features: ArrayView2<f64>,
    sigma: f64,
    first: &[usize],
    second: &[usize],
) -> (f64, f64) {
    let n = values.len();
    let mut gram = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut d2 = 0.0;
            for k in 0..features.ncols() {
                d2 += (features[[i, k]] - features[[j, k]]).powi(2);
            }
            gram[[i, j]] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let m = (first.len() + second.len()) as f64;
    let mut h = Vec::new();
    for &i in first {
        let mut s = 0.0;
        for &j in second {
            s += values[i] * gram[[i, j]] * values[j];
        }
        h.push(2.0 / m * s);
    }
    let k = h.len() as f64;
    let mean = h.iter().sum::<f64>() / k;
    let var = h.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    let se = (var / k).sqrt().max(1e-12);
    (mean, mean / se)
}

/// Row-by-row AIPW written out in full.
pub fn aipw_rows(t: &[f64], y: &[f64], mu0: &[f64], mu1: &[f64], pi: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..t.len() {
        let plug_in = mu1[i] - mu0[i];
        let treated = if t[i] == 1.0 { (y[i] - mu1[i]) / pi[i] } else { 0.0 };
        let control = if t[i] == 0.0 { (y[i] - mu0[i]) / (1.0 - pi[i]) } else { 0.0 };
        total += plug_in + treated - control;
    }
    total / t.len() as f64
}

/// Central finite differences of the relaxed term with respect to the model
/// parameters and gate logits.
pub fn finite_difference(
    model: &MlpModel,
    link: Link,
    x: ArrayView2<f64>,
    target: &[f64],
    w: &[f64],
    draw: &FixedDraw,
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let eval = |m: &MlpModel, w: &[f64]| relaxed_term(m, link, x, target, w, draw).unwrap().loss;
    let params = model.params();
    let mut d_theta = Vec::with_capacity(params.len());
    let mut probe = model.clone();
    for k in 0..params.len() {
        let mut p = params.clone();
        p[k] += h;
        probe.set_params(&p).unwrap();
        let up = eval(&probe, w);
        p[k] -= 2.0 * h;
        probe.set_params(&p).unwrap();
        let down = eval(&probe, w);
        d_theta.push((up - down) / (2.0 * h));
    }
    let mut d_w = Vec::with_capacity(w.len());
    for k in 0..w.len() {
        let mut wp = w.to_vec();
        wp[k] += h;
        let up = eval(model, &wp);
        wp[k] -= 2.0 * h;
        let down = eval(model, &wp);
        d_w.push((up - down) / (2.0 * h));
    }
    (d_theta, d_w)
}

/// `max |a - b| / max(max |b|, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Least squares of `y` on `[1, x]`. Returns coefficients and their standard
/// errors under homoskedastic noise.
pub fn ols(x: ArrayView2<f64>, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, q) = x.dim();
    let design = nalgebra::DMatrix::from_fn(n, q + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] });
    let target = nalgebra::DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let inv = xtx.clone().try_inverse().expect("full rank design");
    let beta = &inv * design.transpose() * &target;
    let resid = &target - &design * &beta;
    let s2 = resid.norm_squared() / (n - q - 1) as f64;
    let se = (0..=q).map(|j| (s2 * inv[(j, j)]).sqrt()).collect();
    (beta.iter().copied().collect(), se)
}
