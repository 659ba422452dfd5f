//! Multilayer non-negative matrix factorization with max-pooling.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::TraceMatrix;
use crate::error::{Error, Result};

pub const DENOM_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfConfig {
    pub ranks: Vec<usize>,
    pub pool_half_window: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub direct_threshold: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig { ranks: vec![100, 50, 25], pool_half_window: 20, tol: 0.05, max_iter: 500, direct_threshold: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct NmfLayer {
    pub h: Array2<f64>,
    pub w: Array2<f64>,
    pub r: usize,
    pub residual: f64,
    /// Frobenius objective after initialization and after every iteration.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub layers: Vec<NmfLayer>,
    pub wx: Array2<f64>,
    pub direct_mask: Vec<bool>,
    pub reverberant: Array2<f64>,
    pub direct: Array2<f64>,
}

impl DecompositionResult {
    /// H¹·Wˣ, which `reverberant + direct` partitions.
    pub fn regenerated(&self) -> Array2<f64> {
        self.layers[0].h.dot(&self.wx)
    }
}

fn frob(o: &Array2<f64>, h: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let d = o - &h.dot(w);
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Lee–Seung multiplicative updates for min ‖O − HW‖_F.
pub fn nmf_layer(o: &Array2<f64>, r: usize, tol: f64, max_iter: usize, seed: u64) -> Result<NmfLayer> {
    let (m, n) = o.dim();
    if r == 0 || r > m.min(n) {
        return Err(Error::Config(format!("rank {r} outside 1..={}", m.min(n))));
    }
    if o.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("matrix has negative or non-finite entries".into()));
    }
    if o.iter().all(|&v| v == 0.0) {
        return Ok(NmfLayer {
            h: Array2::zeros((m, r)),
            w: Array2::zeros((r, n)),
            r,
            residual: 0.0,
            objective: vec![0.0],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (0,1]: 1 - [0,1)
    let mut h = Array2::from_shape_fn((m, r), |_| 1.0 - rng.gen::<f64>());
    let mut w = Array2::from_shape_fn((r, n), |_| 1.0 - rng.gen::<f64>());
    let mut prev = frob(o, &h, &w);
    let mut objective = vec![prev];
    for _ in 0..max_iter {
        let num = o.dot(&w.t());
        let den = h.dot(&w.dot(&w.t()));
        h.zip_mut_with(&num, |a, &b| *a *= b);
        h.zip_mut_with(&den, |a, &b| *a /= b + DENOM_GUARD);
        let num = h.t().dot(o);
        let den = h.t().dot(&h).dot(&w);
        w.zip_mut_with(&num, |a, &b| *a *= b);
        w.zip_mut_with(&den, |a, &b| *a /= b + DENOM_GUARD);
        debug_assert!(h.iter().chain(w.iter()).all(|&v| v >= 0.0));
        let e = frob(o, &h, &w);
        objective.push(e);
        let done = prev <= 0.0 || (prev - e).abs() / prev < tol;
        prev = e;
        if done {
            break;
        }
    }
    Ok(NmfLayer { h, w, r, residual: prev, objective })
}

/// Row-wise moving maximum over columns `j-c..=j+c`, clamped to the row.
pub fn max_pool(w: &Array2<f64>, c: usize) -> Array2<f64> {
    let (rows, n) = w.dim();
    let mut out = Array2::zeros((rows, n));
    for i in 0..rows {
        let row = w.row(i);
        // monotone deque of indices with decreasing values
        let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
        let mut next = 0;
        for j in 0..n {
            let hi = (j + c).min(n - 1);
            while next <= hi {
                while dq.back().is_some_and(|&b| row[b] <= row[next]) {
                    dq.pop_back();
                }
                dq.push_back(next);
                next += 1;
            }
            while dq.front().is_some_and(|&f| f + c < j) {
                dq.pop_front();
            }
            out[[i, j]] = row[*dq.front().unwrap()];
        }
    }
    out
}

/// Effective ranks after clipping to the matrix shape.
pub fn effective_ranks(rows: usize, cols: usize, ranks: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(ranks.len());
    let mut m = rows;
    for &r in ranks {
        let r = r.min(m).min(cols).max(1);
        out.push(r);
        m = r;
    }
    out
}

/// Row-normalized weight of each basis of Wˣ.
pub fn row_weights(wx: &Array2<f64>) -> Vec<f64> {
    let total: f64 = wx.sum();
    wx.sum_axis(Axis(1)).iter().map(|&s| if total > 0.0 { s / total } else { 0.0 }).collect()
}

pub fn deep_decompose(o: &TraceMatrix, cfg: &NmfConfig, seed: u64) -> Result<DecompositionResult> {
    if cfg.ranks.is_empty() {
        return Err(Error::Config("at least one layer required".into()));
    }
    let ranks = effective_ranks(o.rows(), o.cols(), &cfg.ranks);
    let mut layers: Vec<NmfLayer> = Vec::with_capacity(ranks.len());
    let mut x = o.data.clone();
    for (k, &r) in ranks.iter().enumerate() {
        let layer = nmf_layer(&x, r, cfg.tol, cfg.max_iter, seed.wrapping_add(k as u64))?;
        x = max_pool(&layer.w, cfg.pool_half_window);
        layers.push(layer);
    }
    let mut wx = layers.last().unwrap().w.clone();
    for layer in layers[1..].iter().rev() {
        wx = layer.h.dot(&wx);
    }
    let direct_mask: Vec<bool> = row_weights(&wx).iter().map(|&w| w > cfg.direct_threshold).collect();
    let (reverberant, direct) = partition(&layers[0].h, &wx, &direct_mask);
    Ok(DecompositionResult { layers, wx, direct_mask, reverberant, direct })
}

/// Split H¹Wˣ by zeroing the direct (resp. non-direct) columns of H¹.
pub fn partition(h1: &Array2<f64>, wx: &Array2<f64>, mask: &[bool]) -> (Array2<f64>, Array2<f64>) {
    let mut hr = h1.clone();
    let mut hd = h1.clone();
    for (k, &d) in mask.iter().enumerate() {
        if d {
            hr.column_mut(k).fill(0.0);
        } else {
            hd.column_mut(k).fill(0.0);
        }
    }
    (hr.dot(wx), hd.dot(wx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn brute_pool(row: &[f64], c: usize) -> Vec<f64> {
        (0..row.len())
            .map(|j| {
                let lo = j.saturating_sub(c);
                let hi = (j + c).min(row.len() - 1);
                row[lo..=hi].iter().cloned().fold(f64::MIN, f64::max)
            })
            .collect()
    }

    fn rel_err(o: &Array2<f64>, l: &NmfLayer) -> f64 {
        let n = o.iter().map(|v| v * v).sum::<f64>().sqrt();
        frob(o, &l.h, &l.w) / n
    }

    #[test]
    fn rank_one_recovery() {
        let o = array![[3.0, 1.0], [6.0, 2.0]];
        let l = nmf_layer(&o, 1, 1e-12, 500, 7).unwrap();
        assert!(rel_err(&o, &l) < 1e-4);
    }

    #[test]
    fn zero_matrix() {
        let l = nmf_layer(&Array2::zeros((4, 6)), 2, 0.05, 500, 1).unwrap();
        assert_eq!(l.residual, 0.0);
        assert!(l.h.iter().chain(l.w.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let neg = array![[1.0, -1.0], [0.0, 1.0]];
        assert!(matches!(nmf_layer(&neg, 1, 0.05, 10, 0), Err(Error::Domain(_))));
        let o = array![[1.0, 1.0], [0.0, 1.0]];
        assert!(matches!(nmf_layer(&o, 3, 0.05, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn pool_examples() {
        assert_eq!(max_pool(&array![[1.0, 5.0, 2.0]], 1), array![[5.0, 5.0, 5.0]]);
        assert_eq!(max_pool(&array![[0.0, 0.0, 9.0, 0.0, 0.0]], 2), array![[9.0; 5]]);
        let w = array![[1.0, 3.0, 2.0], [4.0, 0.0, 7.0]];
        assert_eq!(max_pool(&w, 0), w);
    }

    #[test]
    fn strong_pattern_flagged() {
        let wx = array![[19.0, 19.0], [1.0, 1.0]];
        let w = row_weights(&wx);
        assert!((w[0] - 0.95).abs() < 1e-12);
        let mask: Vec<bool> = w.iter().map(|&v| v > 0.9).collect();
        assert_eq!(mask, vec![true, false]);
    }

    #[test]
    fn single_layer_uses_w1() {
        let o = TraceMatrix { data: array![[2.0, 4.0, 6.0, 8.0], [1.0, 2.0, 3.0, 4.0]] };
        let cfg = NmfConfig { ranks: vec![1], ..Default::default() };
        let d = deep_decompose(&o, &cfg, 3).unwrap();
        assert_eq!(d.wx, d.layers[0].w);
        assert_eq!(d.direct_mask, vec![true]);
        assert!(d.reverberant.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_for_seed() {
        let o = TraceMatrix { data: Array2::from_shape_fn((3, 40), |(i, j)| ((i * 7 + j * 3) % 11) as f64) };
        let cfg = NmfConfig::default();
        let a = deep_decompose(&o, &cfg, 9).unwrap();
        let b = deep_decompose(&o, &cfg, 9).unwrap();
        assert_eq!(a.wx, b.wx);
        assert_eq!(a.reverberant, b.reverberant);
    }

    fn nonneg_matrix() -> impl Strategy<Value = Array2<f64>> {
        (2usize..12, 2usize..40).prop_flat_map(|(m, n)| {
            prop::collection::vec(0.0f64..10.0, m * n).prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn objective_monotone_and_nonneg(o in nonneg_matrix(), seed in 0u64..1000) {
            let r = 1 + (seed as usize) % o.nrows().min(o.ncols());
            let l = nmf_layer(&o, r, 0.0, 60, seed).unwrap();
            for w in l.objective.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            prop_assert!(l.h.iter().chain(l.w.iter()).all(|&v| v >= 0.0));
        }

        #[test]
        fn pool_matches_brute(row in prop::collection::vec(-5.0f64..5.0, 1..60), c in 0usize..25) {
            let w = Array2::from_shape_vec((1, row.len()), row.clone()).unwrap();
            let p = max_pool(&w, c);
            prop_assert_eq!(p.row(0).to_vec(), brute_pool(&row, c));
            for (a, b) in p.iter().zip(w.iter()) {
                prop_assert!(a >= b);
            }
        }

        #[test]
        fn pool_idempotent_full_window(row in prop::collection::vec(0.0f64..5.0, 1..60)) {
            let w = Array2::from_shape_vec((1, row.len()), row.clone()).unwrap();
            let c = row.len();
            let p = max_pool(&w, c);
            prop_assert_eq!(max_pool(&p, c), p);
        }

        #[test]
        fn partition_sums(o in nonneg_matrix(), seed in 0u64..100, thr in 0.0f64..1.0) {
            let cfg = NmfConfig { direct_threshold: thr, max_iter: 30, ..Default::default() };
            let d = deep_decompose(&TraceMatrix { data: o }, &cfg, seed).unwrap();
            let full = d.regenerated();
            let sum = &d.reverberant + &d.direct;
            for (a, b) in sum.iter().zip(full.iter()) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}
