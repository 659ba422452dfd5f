//! X-means: k-means with BIC-driven cluster splitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::sq_dist;

const KMEANS_ITERS: usize = 100;

/// k-means++ seeding followed by Lloyd iterations. Returns assignments.
fn kmeans_from(xs: &[&[f64]], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let dim = xs[0].len();
    let mut assign = vec![usize::MAX; xs.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, x) in xs.iter().enumerate() {
            let best = centers
                .iter()
                .enumerate()
                .map(|(c, m)| (sq_dist(x, m), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (x, &a) in xs.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        for (c, s) in sums.into_iter().enumerate() {
            if counts[c] > 0 {
                centers[c] = s.into_iter().map(|v| v / counts[c] as f64).collect();
            }
        }
    }
    (assign, centers)
}

fn kmeans_pp(xs: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![xs[rng.gen_range(0..xs.len())].to_vec()];
    while centers.len() < k {
        let d: Vec<f64> =
            xs.iter().map(|x| centers.iter().map(|c| sq_dist(x, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut r = rng.gen_range(0.0..total);
        let mut pick = xs.len() - 1;
        for (i, &v) in d.iter().enumerate() {
            if r < v {
                pick = i;
                break;
            }
            r -= v;
        }
        centers.push(xs[pick].to_vec());
    }
    centers
}

/// BIC of a spherical Gaussian mixture with the given hard assignment.
fn bic(xs: &[&[f64]], assign: &[usize], centers: &[Vec<f64>]) -> f64 {
    let r = xs.len() as f64;
    let k = centers.len() as f64;
    let m = xs[0].len() as f64;
    let sse: f64 = xs.iter().zip(assign).map(|(x, &a)| sq_dist(x, &centers[a])).sum();
    let denom = (r - k).max(1.0);
    let var = (sse / (denom * m)).max(1e-12);
    let mut ll = 0.0;
    for c in 0..centers.len() {
        let rn = assign.iter().filter(|&&a| a == c).count() as f64;
        if rn == 0.0 {
            continue;
        }
        ll += rn * rn.ln() - rn * r.ln() - rn * m / 2.0 * (2.0 * std::f64::consts::PI * var).ln() - m * (rn - k) / 2.0;
    }
    let params = (k - 1.0) + m * k + 1.0;
    ll - params / 2.0 * r.ln()
}

/// Cluster assignments with k chosen by BIC in [1, k_max].
pub fn xmeans(xs: &[Vec<f64>], k_max: usize, seed: u64) -> Vec<usize> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![mean(&refs)];
    let mut assign = vec![0usize; n];
    let k_max = k_max.max(1);
    loop {
        let mut next = Vec::new();
        let mut split_any = false;
        for c in 0..centers.len() {
            let members: Vec<&[f64]> = refs.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(x, _)| *x).collect();
            if members.len() < 4 || centers.len() + next.len() - c >= k_max {
                next.push(centers[c].clone());
                continue;
            }
            let parent = bic(&members, &vec![0; members.len()], std::slice::from_ref(&centers[c]));
            let (ca, cc) = kmeans_from(&members, kmeans_pp(&members, 2, &mut rng));
            let child = if cc.len() == 2 { bic(&members, &ca, &cc) } else { f64::NEG_INFINITY };
            if child > parent && ca.contains(&0) && ca.contains(&1) {
                next.extend(cc);
                split_any = true;
            } else {
                next.push(centers[c].clone());
            }
        }
        let (a, c) = kmeans_from(&refs, next);
        assign = a;
        centers = c;
        if !split_any || centers.len() >= k_max {
            break;
        }
    }
    // relabel densely in first-appearance order
    let mut map = vec![usize::MAX; centers.len()];
    let mut next_id = 0;
    for a in assign.iter_mut() {
        if map[*a] == usize::MAX {
            map[*a] = next_id;
            next_id += 1;
        }
        *a = map[*a];
    }
    assign
}

fn mean(xs: &[&[f64]]) -> Vec<f64> {
    let mut m = vec![0.0; xs[0].len()];
    for x in xs {
        for (a, b) in m.iter_mut().zip(x.iter()) {
            *a += b;
        }
    }
    m.iter().map(|v| v / xs.len() as f64).collect()
}
