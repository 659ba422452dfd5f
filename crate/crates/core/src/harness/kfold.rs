//! Per-location k-fold splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::manifest::ManifestEntry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold id of every labelled entry; `None` for unlabelled ones.
pub fn fold_ids(entries: &[ManifestEntry], k: usize, seed: u64) -> Result<Vec<Option<usize>>> {
    if k < 2 {
        return Err(Error::Protocol(format!("k = {k}, need at least 2 folds")));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        if e.is_labelled() {
            by_label.entry(e.label.as_str()).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = vec![None; entries.len()];
    for (label, mut idx) in by_label {
        if idx.len() < k {
            return Err(Error::Protocol(format!("location {label} has {} traces, fewer than k = {k}", idx.len())));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            ids[i] = Some(j % k);
        }
    }
    Ok(ids)
}

/// Inverted (default): train on fold i, test on the rest. Standard: the
/// reverse. Unlabelled entries are always test entries.
pub fn kfold_split(entries: &[ManifestEntry], k: usize, seed: u64, inverted: bool) -> Result<Vec<Fold>> {
    let ids = fold_ids(entries, k, seed)?;
    Ok((0..k)
        .map(|f| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, id) in ids.iter().enumerate() {
                match id {
                    Some(g) if (*g == f) == inverted => train.push(i),
                    _ => test.push(i),
                }
            }
            Fold { train, test }
        })
        .collect())
}
