use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::CleanRecord;
use crate::error::{Error, Result};

/// A k-fold partition of a labeled corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index in [0, k) for each record, in corpus order.
    pub assignments: Vec<usize>,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        (train, valid)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold split, deterministic in `seed`.
///
/// Per class, records are shuffled and dealt floor(n_c/k) to every fold; the
/// n_c mod k leftovers go to consecutive folds starting at a rotating offset,
/// so total fold sizes also differ by at most one.
pub fn make_folds(records: &[CleanRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_with(records, k, seed, true)
}

pub fn make_folds_with(
    records: &[CleanRecord],
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count k={k} must be >= 2")));
    }
    if k > records.len() {
        return Err(Error::Config(format!(
            "fold count k={k} exceeds record count {}",
            records.len()
        )));
    }
    let labels: Vec<u8> = records
        .iter()
        .map(|r| match r.label {
            Some(l) if l <= 1 => Ok(l),
            Some(l) => Err(Error::Data(format!("record {} has label {l} outside {{0,1}}", r.id))),
            None => Err(Error::Data(format!(
                "record {} is unlabeled; folds need labels",
                r.id
            ))),
        })
        .collect::<Result<_>>()?;

    let assignments = fold_assignments(&labels, k, seed, stratified);
    Ok(FoldPlan {
        k,
        seed,
        assignments,
        stratified,
    })
}

/// Per-row fold index over bare labels. Used by `make_folds` and by the
/// ensembles' internal out-of-fold protocol.
pub fn fold_assignments(labels: &[u8], k: usize, seed: u64, stratified: bool) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![usize::MAX; labels.len()];

    let classes: Vec<u8> = if stratified { vec![0, 1] } else { vec![u8::MAX] };
    let mut extra_offset = 0usize;
    for class in classes {
        let mut idx: Vec<usize> = (0..labels.len())
            .filter(|&i| !stratified || labels[i] == class)
            .collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let base = idx.len() / k;
        let extras = idx.len() % k;
        let mut cursor = 0;
        for f in 0..k {
            let mut take = base;
            // Leftovers fill folds extra_offset, extra_offset+1, ... cyclically.
            let pos = (f + k - extra_offset % k) % k;
            if pos < extras {
                take += 1;
            }
            for &i in &idx[cursor..cursor + take] {
                assignments[i] = f;
            }
            cursor += take;
        }
        extra_offset += extras;
    }

    debug_assert!(assignments.iter().all(|&a| a < k));
    assignments
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n_pos: usize, n_neg: usize) -> Vec<CleanRecord> {
        let mut out = Vec::new();
        for i in 0..n_pos + n_neg {
            out.push(CleanRecord {
                id: format!("r{i}"),
                user_id: "u".into(),
                text: String::new(),
                timestamp: 0,
                likes: 0,
                comments: 0,
                shares: 0,
                image_refs: Vec::new(),
                label: Some(if i < n_pos { 1 } else { 0 }),
            });
        }
        out
    }

    #[test]
    fn benchmark_size_split_matches_integer_division() {
        // 5172 records, k=10: integer-division oracle gives 8 folds of 517
        // and 2 folds of 518.
        let records = corpus(934, 4238);
        let plan = make_folds(&records, 10, 0).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable();
        let expected: Vec<usize> = {
            let (n, k) = (5172usize, 10usize);
            let mut v: Vec<usize> = (0..k).map(|f| n / k + usize::from(f < n % k)).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(sizes, expected);
        assert_eq!(sizes.iter().filter(|&&s| s == 517).count(), 8);
        assert_eq!(sizes.iter().filter(|&&s| s == 518).count(), 2);
    }

    #[test]
    fn tiny_balanced_corpus_stratifies_exactly() {
        let records = corpus(2, 2);
        let plan = make_folds(&records, 2, 7).unwrap();
        for fold in 0..2 {
            let (_, valid) = plan.fold_indices(fold);
            let pos = valid.iter().filter(|&&i| records[i].label == Some(1)).count();
            let neg = valid.len() - pos;
            assert_eq!(pos, 1);
            assert_eq!(neg, 1);
        }
    }

    #[test]
    fn same_seed_same_assignments() {
        let records = corpus(30, 70);
        let a = make_folds(&records, 5, 42).unwrap();
        let b = make_folds(&records, 5, 42).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let c = make_folds(&records, 5, 43).unwrap();
        assert_ne!(a.assignments, c.assignments);
    }

    #[test]
    fn invariants_hold_across_seeds() {
        let records = corpus(23, 61);
        let n_pos = 23.0;
        for seed in 0..100u64 {
            let plan = make_folds(&records, 7, seed).unwrap();
            // Partition: every record in exactly one fold.
            assert_eq!(plan.assignments.len(), records.len());
            assert!(plan.assignments.iter().all(|&f| f < 7));
            // Fold sizes within 1 of each other.
            let sizes = plan.fold_sizes();
            let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(max - min <= 1, "seed {seed}: sizes {sizes:?}");
            // Stratification: positive count within 1 of proportionality.
            for fold in 0..7 {
                let (_, valid) = plan.fold_indices(fold);
                let pos = valid.iter().filter(|&&i| records[i].label == Some(1)).count();
                let expected = n_pos / 7.0;
                assert!(
                    (pos as f64 - expected).abs() <= 1.0,
                    "seed {seed} fold {fold}: {pos} positives vs {expected}"
                );
            }
        }
    }

    #[test]
    fn k_larger_than_corpus_is_an_error() {
        let records = corpus(2, 2);
        assert!(make_folds(&records, 5, 0).is_err());
        assert!(make_folds(&records, 1, 0).is_err());
    }

    #[test]
    fn unlabeled_record_is_an_error() {
        let mut records = corpus(2, 2);
        records[0].label = None;
        assert!(make_folds(&records, 2, 0).is_err());
    }

    #[test]
    fn unstratified_still_partitions() {
        let records = corpus(10, 30);
        let plan = make_folds_with(&records, 4, 3, false).unwrap();
        let sizes = plan.fold_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 40);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(!plan.stratified);
    }
}
