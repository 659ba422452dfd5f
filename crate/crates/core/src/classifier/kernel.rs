//! Gaussian RBF kernel and the median bandwidth heuristic.

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// K(x, y) = exp(-γ‖x − y‖²)
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("kernel on {} vs {} dims", x.len(), y.len())));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    Ok((-gamma * sq_dist(x, y)).exp())
}

/// γ = 1 / median pairwise squared distance; 1 when the median is zero.
pub fn median_gamma(xs: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(xs.len() * xs.len().saturating_sub(1) / 2);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            d.push(sq_dist(&xs[i], &xs[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if med > 0.0 {
        1.0 / med
    } else {
        1.0
    }
}

pub fn gram(xs: &[Vec<f64>], gamma: f64) -> Array2<f64> {
    let n = xs.len();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in i + 1..n {
            let v = (-gamma * sq_dist(&xs[i], &xs[j])).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}
