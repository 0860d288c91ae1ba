//! Gaussian kernel and the median bandwidth heuristic.
//!
//! The kernel is `k(x, x') = exp(-‖x - x'‖² / (2σ²))`. On zero-dimensional
//! inputs (an empty covariate subset) every squared distance is zero, so the
//! kernel is the constant 1.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;

use crate::error::{Error, Result};
use crate::seed;

/// Default number of points used by the median heuristic.
pub const DEFAULT_SUBSAMPLE_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: f64,
    pub subsample_cap: usize,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            bandwidth,
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
        })
    }

    /// Bandwidth from [`median_bandwidth`] on `points`.
    pub fn from_median(points: ArrayView2<f64>, cap: usize, seed: u64) -> Self {
        Self {
            bandwidth: median_bandwidth(points, cap, seed),
            subsample_cap: cap,
        }
    }

    /// `1 / (2σ²)`, the factor multiplying squared distances.
    pub fn gamma(&self) -> f64 {
        0.5 / (self.bandwidth * self.bandwidth)
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn gaussian(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * sigma * sigma)).exp()
}

/// Median pairwise Euclidean distance of (a seeded subsample of at most
/// `cap`) rows of `points`.
///
/// Returns 1.0 when fewer than two points are available, when the points are
/// zero-dimensional, or when the median distance is zero.
pub fn median_bandwidth(points: ArrayView2<f64>, cap: usize, seed: u64) -> f64 {
    let (m, q) = points.dim();
    let cap = cap.max(2);
    if m < 2 || q == 0 {
        return 1.0;
    }
    let rows: Vec<usize> = if m > cap {
        let mut rng = seed::rng(seed);
        let mut picked = index::sample(&mut rng, m, cap).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..m).collect()
    };
    let buf: Vec<Vec<f64>> = rows.iter().map(|&i| points.row(i).to_vec()).collect();
    let mut dists = Vec::with_capacity(buf.len() * (buf.len() - 1) / 2);
    for i in 0..buf.len() {
        for j in (i + 1)..buf.len() {
            dists.push(squared_distance(&buf[i], &buf[j]));
        }
    }
    // sqrt is monotone, so take the median of squared distances first
    let median_sq = median_in_place(&mut dists);
    let median = median_sq.sqrt();
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // average the two middle distances, returned squared
        (0.5 * (below.sqrt() + upper.sqrt())).powi(2)
    }
}

/// Gram matrix `K[i, j] = k(a_i, b_j)`.
pub fn gaussian_gram(a: ArrayView2<f64>, b: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gram inputs have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {sigma}")));
    }
    let gamma = 0.5 / (sigma * sigma);
    let a_rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
    let b_rows: Vec<Vec<f64>> = b.rows().into_iter().map(|r| r.to_vec()).collect();
    Ok(Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        (-gamma * squared_distance(&a_rows[i], &b_rows[j])).exp()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn median_fallbacks() {
        let same = Array2::from_elem((5, 3), 2.5);
        assert_eq!(median_bandwidth(same.view(), 100, 0), 1.0);
        let single = array![[1.0, 2.0]];
        assert_eq!(median_bandwidth(single.view(), 100, 0), 1.0);
        let empty_dim = Array2::<f64>::zeros((10, 0));
        assert_eq!(median_bandwidth(empty_dim.view(), 100, 0), 1.0);
    }

    #[test]
    fn median_of_two_points() {
        let pts = array![[0.0], [2.0]];
        assert_eq!(median_bandwidth(pts.view(), 100, 0), 2.0);
    }

    #[test]
    fn median_even_count_averages_distances() {
        // distances 1, 3, 4 and 1, 2, 3 -> sorted 1 1 2 3 3 4 -> (2 + 3) / 2
        let pts = array![[0.0], [1.0], [3.0], [4.0]];
        assert_abs_diff_eq!(median_bandwidth(pts.view(), 100, 0), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn subsampling_is_seeded() {
        let pts = Array2::from_shape_fn((300, 2), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
        let a = median_bandwidth(pts.view(), 50, 9);
        let b = median_bandwidth(pts.view(), 50, 9);
        assert_eq!(a, b);
        assert!(a > 0.0);
    }

    #[test]
    fn spot_values() {
        let a = array![[0.0, 0.0]];
        let b = array![[0.6, 0.8]];
        let k = gaussian_gram(a.view(), b.view(), 1.0).unwrap();
        assert_abs_diff_eq!(k[[0, 0]], (-0.5f64).exp(), epsilon = 1e-15);
        let kk = gaussian_gram(a.view(), a.view(), 0.3).unwrap();
        assert_eq!(kk[[0, 0]], 1.0);
    }

    #[test]
    fn zero_dimensional_inputs_give_ones() {
        let a = Array2::<f64>::zeros((3, 0));
        let b = Array2::<f64>::zeros((2, 0));
        let k = gaussian_gram(a.view(), b.view(), 0.7).unwrap();
        assert!(k.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Array2::<f64>::zeros((3, 2));
        let b = Array2::<f64>::zeros((2, 1));
        assert!(gaussian_gram(a.view(), b.view(), 1.0).is_err());
        assert!(KernelConfig::new(0.0).is_err());
    }
}
