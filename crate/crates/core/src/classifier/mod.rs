//! Bagged one-vs-all RBF classifiers with majority-vote acceptance.

pub mod kernel;
pub mod smo;
pub mod xmeans;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_sim::corpus::derive_seed;
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintVector;
use crate::harness::manifest::UNLABELLED;
use kernel::{median_gamma, sq_dist};
use smo::{train_svm, KernelClassifier, SmoParams};
use xmeans::xmeans;

pub const REJECT_LABEL: &str = "REJECT";
pub const MODEL_VERSION: u32 = 1;

/// How a fingerprint becomes a classifier input before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMap {
    Raw,
    /// ln(floor + p / n_segments)
    LogMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub members: usize,
    pub accept_votes: usize,
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// fixed RBF width; median heuristic when unset
    pub gamma: Option<f64>,
    pub bagging: bool,
    pub prefilter: bool,
    /// relative distance under which a negative counts as a positive copy
    pub delta: f64,
    pub feature_map: FeatureMap,
    pub log_floor: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            members: 10,
            accept_votes: 6,
            c: 10.0,
            tol: 1e-3,
            max_iter: 100_000,
            gamma: None,
            bagging: true,
            prefilter: true,
            delta: 1e-6,
            feature_map: FeatureMap::LogMean,
            log_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[Vec<f64>]) -> Standardizer {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for x in xs {
            for k in 0..d {
                std[k] += (x[k] - mean[k]).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationModel {
    pub location_label: String,
    pub members: Vec<KernelClassifier>,
}

impl LocationModel {
    pub fn votes(&self, z: &[f64]) -> usize {
        self.members.iter().filter(|m| m.predict(z)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub version: u32,
    pub config: ClassifierConfig,
    pub dim: usize,
    pub gamma: f64,
    pub standardizer: Standardizer,
    pub per_location: Vec<LocationModel>,
    pub reject_label: String,
    /// warnings raised during training
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: String,
    pub votes: BTreeMap<String, usize>,
}

impl Classification {
    pub fn is_reject(&self) -> bool {
        self.label == REJECT_LABEL
    }
}

pub fn feature_vector(fp: &FingerprintVector, cfg: &ClassifierConfig) -> Vec<f64> {
    match cfg.feature_map {
        FeatureMap::Raw => fp.p.clone(),
        FeatureMap::LogMean => {
            let n = fp.n_segments.max(1) as f64;
            fp.p.iter().map(|v| (cfg.log_floor + v / n).ln()).collect()
        }
    }
}

/// Indices of negatives that survive cluster-level contamination removal.
pub fn prefilter_negatives(
    negatives: &[Vec<f64>],
    positives: &[Vec<f64>],
    delta: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::Training("prefilter needs non-empty sets".into()));
    }
    let k_max = (negatives.len() as f64).sqrt().ceil() as usize;
    let assign = xmeans(negatives, k_max, seed);
    let k = assign.iter().max().map_or(0, |m| m + 1);
    let mut dirty = vec![false; k];
    for (x, &a) in negatives.iter().zip(&assign) {
        if dirty[a] {
            continue;
        }
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        dirty[a] = positives.iter().any(|p| {
            let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let tol = delta * nx.max(np);
            sq_dist(x, p) <= tol * tol
        });
    }
    let keep: Vec<usize> = (0..negatives.len()).filter(|&i| !dirty[assign[i]]).collect();
    if keep.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    Ok(keep)
}

/// `parts` disjoint shares of `0..n` after a seeded shuffle; with fewer items
/// than parts each share is a cyclic window so no share is empty.
fn shares(n: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if n >= parts {
        (0..parts).map(|i| idx.iter().skip(i).step_by(parts).copied().collect()).collect()
    } else {
        (0..parts).map(|i| vec![idx[i % n]]).collect()
    }
}

/// Train the ten members of one location against a negative pool.
pub fn train_location(
    label: &str,
    positives: &[Vec<f64>],
    pool: &[Vec<f64>],
    gamma: f64,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(LocationModel, Vec<String>)> {
    let mut notes = Vec::new();
    if positives.is_empty() {
        return Err(Error::Training(format!("{label}: no positive fingerprints")));
    }
    if pool.is_empty() {
        return Err(Error::Training(format!("{label}: empty negative pool")));
    }
    let pool_idx: Vec<usize> = if cfg.prefilter {
        match prefilter_negatives(pool, positives, cfg.delta, derive_seed(seed, &[0])) {
            Ok(k) => k,
            Err(Error::EmptyNegatives) => {
                notes.push(format!("{label}: prefilter removed every negative, using the unfiltered pool"));
                (0..pool.len()).collect()
            }
            Err(e) => return Err(e),
        }
    } else {
        (0..pool.len()).collect()
    };
    let params = SmoParams { c: cfg.c, tol: cfg.tol, max_iter: cfg.max_iter };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let (pos_sets, neg_sets): (Vec<Vec<usize>>, Vec<Vec<usize>>) = if cfg.bagging {
        if positives.len() < cfg.members {
            notes.push(format!(
                "{label}: {} positives for {} members, members share positives",
                positives.len(),
                cfg.members
            ));
        }
        let ps = shares(positives.len(), cfg.members, &mut rng);
        let ns = (0..cfg.members)
            .map(|_| {
                let mut p = pool_idx.clone();
                p.shuffle(&mut rng);
                p.truncate(pool_idx.len().div_ceil(cfg.members).max(1));
                p
            })
            .collect();
        (ps, ns)
    } else {
        (vec![(0..positives.len()).collect()], vec![pool_idx.clone()])
    };
    let members = pos_sets
        .iter()
        .zip(&neg_sets)
        .map(|(ps, ns)| {
            let mut x: Vec<Vec<f64>> = ps.iter().map(|&i| positives[i].clone()).collect();
            let mut y = vec![1.0; x.len()];
            x.extend(ns.iter().map(|&i| pool[i].clone()));
            y.extend(std::iter::repeat_n(-1.0, ns.len()));
            train_svm(&x, &y, gamma, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    // without bagging the single classifier casts every vote
    let members = if cfg.bagging { members } else { vec![members[0].clone(); cfg.members] };
    Ok((LocationModel { location_label: label.to_string(), members }, notes))
}

/// Train on labelled fingerprints; entries labelled UNLABELLED only join the
/// negative pools.
pub fn train(data: &[(FingerprintVector, String)], cfg: &ClassifierConfig, seed: u64) -> Result<EnsembleModel> {
    if data.is_empty() {
        return Err(Error::Training("no training fingerprints".into()));
    }
    if cfg.members == 0 || cfg.accept_votes == 0 || cfg.accept_votes > cfg.members {
        return Err(Error::Config(format!("{} votes of {} members", cfg.accept_votes, cfg.members)));
    }
    let dim = data[0].0.len();
    if data.iter().any(|(f, _)| f.len() != dim) {
        return Err(Error::Shape("fingerprints of differing length".into()));
    }
    let raw: Vec<Vec<f64>> = data.iter().map(|(f, _)| feature_vector(f, cfg)).collect();
    let standardizer = Standardizer::fit(&raw);
    let z: Vec<Vec<f64>> = raw.iter().map(|x| standardizer.apply(x)).collect();
    let gamma = match cfg.gamma {
        Some(g) if g > 0.0 => g,
        Some(g) => return Err(Error::Config(format!("gamma must be positive, got {g}"))),
        None => median_gamma(&z),
    };
    let mut labels: Vec<&str> = data.iter().map(|(_, l)| l.as_str()).filter(|l| *l != UNLABELLED).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.is_empty() {
        return Err(Error::Training("no labelled locations".into()));
    }
    let trained = labels
        .par_iter()
        .enumerate()
        .map(|(li, &label)| {
            let pos: Vec<Vec<f64>> =
                z.iter().zip(data).filter(|(_, (_, l))| l == label).map(|(x, _)| x.clone()).collect();
            let pool: Vec<Vec<f64>> =
                z.iter().zip(data).filter(|(_, (_, l))| l != label).map(|(x, _)| x.clone()).collect();
            train_location(label, &pos, &pool, gamma, cfg, derive_seed(seed, &[li as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_location = Vec::new();
    let mut notes = Vec::new();
    for (m, n) in trained {
        per_location.push(m);
        notes.extend(n);
    }
    for n in &notes {
        log::warn!("{n}");
    }
    Ok(EnsembleModel {
        version: MODEL_VERSION,
        config: cfg.clone(),
        dim,
        gamma,
        standardizer,
        per_location,
        reject_label: REJECT_LABEL.to_string(),
        notes,
    })
}

/// Accept locations with at least `accept_votes`; the single highest-voted
/// accepted location wins, ties and no acceptance reject.
pub fn decide(votes: &BTreeMap<String, usize>, accept_votes: usize) -> String {
    let best = votes.values().copied().max().unwrap_or(0);
    if best < accept_votes || votes.values().filter(|&&v| v == best).count() > 1 {
        return REJECT_LABEL.to_string();
    }
    votes.iter().find(|(_, &v)| v == best).map(|(k, _)| k.clone()).unwrap()
}

impl EnsembleModel {
    pub fn classify(&self, x: &FingerprintVector) -> Result<Classification> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("fingerprint has {} bands, model expects {}", x.len(), self.dim)));
        }
        let z = self.standardizer.apply(&feature_vector(x, &self.config));
        let votes: BTreeMap<String, usize> =
            self.per_location.iter().map(|m| (m.location_label.clone(), m.votes(&z))).collect();
        Ok(Classification { label: decide(&votes, self.config.accept_votes), votes })
    }

    pub fn labels(&self) -> Vec<String> {
        self.per_location.iter().map(|m| m.location_label.clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EnsembleModel> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let m: EnsembleModel = serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if m.version != MODEL_VERSION {
            return Err(Error::Data(format!("model version {} unsupported", m.version)));
        }
        Ok(m)
    }
}
