//! Stratified k-fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Assigns every sample to one of `k` folds so that each class is spread
/// over the folds as evenly as possible.
///
/// Within each class the sample order is shuffled with a seeded RNG and
/// folds are dealt round-robin. The dealing position carries over from one
/// class to the next, which keeps total fold sizes within one sample of each
/// other as well.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("fold count", format!("k must be at least 2, got {k}")));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    for (class, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < k {
            return Err(Error::Stratification { class, count: m.len(), k });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

/// Per-fold, per-class sample counts, `[fold][class]`.
pub fn fold_class_counts(labels: &[usize], folds: &[usize], k: usize) -> Vec<Vec<usize>> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![vec![0; classes]; k];
    for (&l, &f) in labels.iter().zip(folds) {
        out[f][l] += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels_from_counts(counts: &[usize]) -> Vec<usize> {
        counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect()
    }

    #[test]
    fn divisible_classes_split_exactly() {
        let labels = labels_from_counts(&[25, 25, 25, 25]);
        let folds = stratified_kfold(&labels, 5, 7).unwrap();
        for row in fold_class_counts(&labels, &folds, 5) {
            assert_eq!(row, vec![5, 5, 5, 5]);
        }
    }

    #[test]
    fn skewed_cohort_balances_within_one() {
        let labels = labels_from_counts(&[784, 570, 97, 36]);
        let folds = stratified_kfold(&labels, 5, 1).unwrap();
        let counts = fold_class_counts(&labels, &folds, 5);
        for class in 0..4 {
            let col: Vec<usize> = counts.iter().map(|r| r[class]).collect();
            assert!(col.iter().max().unwrap() - col.iter().min().unwrap() <= 1, "{col:?}");
        }
        let sizes: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }

    #[test]
    fn same_seed_same_assignment() {
        let labels = labels_from_counts(&[30, 12, 9]);
        assert_eq!(stratified_kfold(&labels, 3, 11).unwrap(), stratified_kfold(&labels, 3, 11).unwrap());
        assert_ne!(stratified_kfold(&labels, 3, 11).unwrap(), stratified_kfold(&labels, 3, 12).unwrap());
    }

    #[test]
    fn small_class_is_an_error() {
        let labels = labels_from_counts(&[10, 3]);
        assert!(matches!(stratified_kfold(&labels, 5, 0), Err(Error::Stratification { class: 1, count: 3, k: 5 })));
        assert!(stratified_kfold(&labels, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(counts in proptest::collection::vec(5usize..60, 1..6), k in 2usize..6, seed in any::<u64>()) {
            let labels = labels_from_counts(&counts);
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            prop_assert_eq!(folds.len(), labels.len());
            prop_assert!(folds.iter().all(|&f| f < k));
            let table = fold_class_counts(&labels, &folds, k);
            for (class, &n) in counts.iter().enumerate() {
                let col: Vec<usize> = table.iter().map(|r| r[class]).collect();
                prop_assert_eq!(col.iter().sum::<usize>(), n);
                prop_assert!(col.iter().max().unwrap() - col.iter().min().unwrap() <= 1);
            }
        }
    }
}
