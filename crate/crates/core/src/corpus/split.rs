//! Imbalance-aware splitting: negative down-sampling and repository-grouped k-fold.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::CommitRecord;
use crate::error::{Error, Result};

/// Returns every positive plus exactly `positives.len()` negatives drawn
/// uniformly without replacement. Sampled negatives keep their input order.
pub fn downsample_negatives<R: Clone>(positives: &[R], negatives: &[R], seed: u64) -> Result<Vec<R>> {
    if negatives.len() < positives.len() {
        return Err(Error::InsufficientNegatives {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, negatives.len(), positives.len()).into_vec();
    picked.sort_unstable();
    let mut out = positives.to_vec();
    out.extend(picked.into_iter().map(|i| negatives[i].clone()));
    Ok(out)
}

/// One cross-validation fold, as indices into the dataset it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test_repos: BTreeSet<String>,
    /// Balanced: equal numbers of positives and negatives, none from `test_repos`.
    pub train: Vec<usize>,
    /// Every record (both labels) of the held-out repositories.
    pub test: Vec<usize>,
}

impl Fold {
    pub fn train_records<'a>(&self, records: &'a [CommitRecord]) -> Vec<&'a CommitRecord> {
        self.train.iter().map(|&i| &records[i]).collect()
    }

    pub fn test_records<'a>(&self, records: &'a [CommitRecord]) -> Vec<&'a CommitRecord> {
        self.test.iter().map(|&i| &records[i]).collect()
    }
}

/// Groups repositories into `k` folds.
///
/// Repositories that contain positives are shuffled with `seed` and dealt
/// round-robin, so group sizes differ by at most one. Repositories holding
/// only negatives are dealt the same way but only ever appear on the test
/// side. Each fold's training side is balanced with [`downsample_negatives`]
/// using negatives of the training repositories.
pub fn split_kfold(records: &[CommitRecord], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut by_repo: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let entry = by_repo.entry(r.repo.as_str()).or_default();
        if r.label.is_positive() {
            entry.0.push(i);
        } else {
            entry.1.push(i);
        }
    }
    let mut positive_repos: Vec<&str> = by_repo
        .iter()
        .filter(|(_, (p, _))| !p.is_empty())
        .map(|(name, _)| *name)
        .collect();
    let mut negative_only: Vec<&str> = by_repo
        .iter()
        .filter(|(_, (p, _))| p.is_empty())
        .map(|(name, _)| *name)
        .collect();
    if positive_repos.len() < k {
        return Err(Error::TooFewRepositories {
            k,
            repos: positive_repos.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positive_repos.shuffle(&mut rng);
    negative_only.shuffle(&mut rng);

    let mut groups: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    for (i, repo) in positive_repos.iter().enumerate() {
        groups[i % k].insert(repo.to_string());
    }
    let mut negative_only_groups: Vec<Vec<&str>> = vec![Vec::new(); k];
    for (i, repo) in negative_only.iter().enumerate() {
        negative_only_groups[i % k].push(repo);
    }

    let mut folds = Vec::with_capacity(k);
    for (fold_idx, test_repos) in groups.into_iter().enumerate() {
        let mut train_pos = Vec::new();
        let mut train_neg = Vec::new();
        let mut test = Vec::new();
        for repo in &positive_repos {
            let (pos, neg) = &by_repo[repo];
            if test_repos.contains(*repo) {
                test.extend(pos.iter().chain(neg.iter()).copied());
            } else {
                train_pos.extend(pos.iter().copied());
                train_neg.extend(neg.iter().copied());
            }
        }
        let mut all_test_repos = test_repos;
        for repo in &negative_only_groups[fold_idx] {
            test.extend(by_repo[repo].1.iter().copied());
            all_test_repos.insert(repo.to_string());
        }
        train_pos.sort_unstable();
        train_neg.sort_unstable();
        test.sort_unstable();
        let fold_seed = seed.wrapping_add(fold_idx as u64 + 1);
        let train = downsample_negatives(&train_pos, &train_neg, fold_seed)?;
        folds.push(Fold {
            index: fold_idx,
            test_repos: all_test_repos,
            train,
            test,
        });
    }
    Ok(folds)
}
