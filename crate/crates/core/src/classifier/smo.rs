//! Soft-margin kernel SVM trained by sequential minimal optimization with
//! second-order working-set selection.

use serde::{Deserialize, Serialize};

use super::kernel::{gram, sq_dist};
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelClassifier {
    pub support_vectors: Vec<Vec<f64>>,
    /// αᵢ·yᵢ
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    /// max KKT violation at exit
    pub kkt_residual: f64,
    pub low_confidence: bool,
}

impl KernelClassifier {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * (-self.gamma * sq_dist(sv, x)).exp())
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams { c: 10.0, tol: 1e-3, max_iter: 100_000 }
    }
}

/// Train on labels `y` in {+1, -1}.
pub fn train_svm(x: &[Vec<f64>], y: &[f64], gamma: f64, p: &SmoParams) -> Result<KernelClassifier> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::Training(format!("{n} samples with {} labels", y.len())));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Training("labels must be +1 or -1".into()));
    }
    let dim = x[0].len();
    if x.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("ragged training set".into()));
    }
    let k = gram(x, gamma);
    let c = p.c;
    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα − eᵀα
    let mut g = vec![-1.0; n];
    let up = |a: f64, yy: f64| (yy > 0.0 && a < c) || (yy < 0.0 && a > 0.0);
    let low = |a: f64, yy: f64| (yy > 0.0 && a > 0.0) || (yy < 0.0 && a < c);
    let mut gap = f64::INFINITY;
    for _ in 0..p.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * g[t] > gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * g[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (k[[i, i]] + k[[t, t]] - 2.0 * k[[i, t]]).max(TAU);
                let obj = -b * b / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = if i == usize::MAX || gmin == f64::INFINITY { 0.0 } else { gmax - gmin };
        if gap < p.tol || j == usize::MAX {
            break;
        }
        let (yi, yj) = (y[i], y[j]);
        let qij = yi * yj * k[[i, j]];
        let (ai, aj) = (alpha[i], alpha[j]);
        if yi != yj {
            let quad = (k[[i, i]] + k[[j, j]] + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[[i, i]] + k[[j, j]] - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += y[t] * (yi * di * k[[t, i]] + yj * dj * k[[t, j]]);
        }
    }

    // bias from free vectors, else midpoint of the feasible interval
    let (mut sum, mut nfree) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * g[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            nfree += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if nfree > 0 {
        sum / nfree as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };

    let mut svs = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            svs.push(x[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    let mut model = KernelClassifier {
        support_vectors: svs,
        alphas: coef,
        bias: -rho,
        gamma,
        kkt_residual: gap,
        low_confidence: false,
    };
    let correct = x.iter().zip(y).filter(|(xi, &yi)| (model.decision(xi) > 0.0) == (yi > 0.0)).count();
    model.low_confidence = (correct as f64) < 0.75 * n as f64;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            x.push(vec![s * sep + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            y.push(s);
        }
        (x, y)
    }

    /// Dual objective and KKT conditions checked from the returned model.
    #[test]
    fn separable_blobs_zero_error_and_kkt() {
        let (x, y) = blobs(40, 3.0, 1);
        let m = train_svm(&x, &y, 0.5, &SmoParams::default()).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert!(m.decision(xi) * yi > 0.0);
        }
        assert!(m.kkt_residual < 1e-3);
        assert!(!m.low_confidence);
        // Σ αᵢyᵢ = 0
        assert!(m.alphas.iter().sum::<f64>().abs() < 1e-9);
        assert!(m.alphas.iter().all(|a| a.abs() <= 10.0 + 1e-12));
    }

    #[test]
    fn two_point_problem_matches_closed_form() {
        // x = ±1 in 1-D, γ = 1: hard-margin solution α = 1/(1 − e^{-4}), b = 0
        let x = vec![vec![1.0], vec![-1.0]];
        let y = vec![1.0, -1.0];
        let m = train_svm(&x, &y, 1.0, &SmoParams { c: 100.0, tol: 1e-12, max_iter: 1000 }).unwrap();
        let a = 1.0 / (1.0 - (-4.0f64).exp());
        let mut coef = m.alphas.clone();
        coef.sort_by(|p, q| p.total_cmp(q));
        assert!((coef[1] - a).abs() < 1e-9, "{coef:?}");
        assert!(m.bias.abs() < 1e-9);
        assert!((m.decision(&[1.0]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_positives_and_negatives_are_low_confidence() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![(i / 2) as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = train_svm(&x, &y, 1.0, &SmoParams::default()).unwrap();
        for xi in &x {
            assert!(m.decision(xi).abs() < 1e-6);
        }
        assert!(m.low_confidence);
    }

    #[test]
    fn bad_labels_rejected() {
        assert!(train_svm(&[vec![0.0]], &[0.5], 1.0, &SmoParams::default()).is_err());
        assert!(train_svm(&[], &[], 1.0, &SmoParams::default()).is_err());
    }
}
