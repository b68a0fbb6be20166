//! Seeded stratified k-fold splitting.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// A k-way stratified partition of dataset indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Per class: shuffle that class's indices with the seeded stream, then deal
/// them onto a single round-robin counter shared across classes. The shared
/// counter keeps per-class fold counts within 1 of each other and spreads the
/// per-class remainders so overall fold sizes also differ by at most 1.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Input(format!("k must be at least 2, got {k}")));
    }
    if labels.is_empty() {
        return Err(Error::Input("cannot split an empty label list".into()));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::Input(format!(
                "class {class} has {} members, fewer than k={k}",
                members.len()
            )));
        }
    }
    let mut rng = RngStream::seed(seed).derive(&[0xf01d]);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for members in &mut by_class {
        rng.shuffle(members);
        for &idx in members.iter() {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    Ok(FoldPlan { k, seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// The real dataset's label multiset: 26 classes of 486, class 9 has 487.
    fn isl_labels() -> Vec<usize> {
        let mut labels = Vec::new();
        for class in 0..26 {
            let n = if class == 9 { 487 } else { 486 };
            labels.extend(std::iter::repeat(class).take(n));
        }
        labels
    }

    #[test]
    fn isl_fold_sizes_match_protocol() {
        let labels = isl_labels();
        assert_eq!(labels.len(), 12_637);
        let plan = stratified_kfold(&labels, 5, 42).unwrap();
        for fold in 0..5 {
            let test = plan.test_indices(fold).len();
            let train = plan.train_indices(fold).len();
            assert!(test == 2527 || test == 2528, "fold {fold} test size {test}");
            assert!(train == 10_109 || train == 10_110, "fold {fold} train {train}");
            assert_eq!(test + train, 12_637);
        }
    }

    #[test]
    fn folds_are_disjoint_and_exhaustive() {
        let labels = isl_labels();
        let plan = stratified_kfold(&labels, 5, 42).unwrap();
        let mut seen = HashSet::new();
        for fold in &plan.folds {
            for &i in fold {
                assert!(seen.insert(i), "index {i} in two folds");
            }
        }
        assert_eq!(seen.len(), labels.len());
    }

    #[test]
    fn per_class_counts_within_one() {
        let labels = isl_labels();
        let plan = stratified_kfold(&labels, 5, 42).unwrap();
        for class in 0..26 {
            let counts: Vec<usize> = plan
                .folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            let (mn, mx) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(mx - mn <= 1, "class {class}: {counts:?}");
        }
    }

    #[test]
    fn two_balanced_classes_get_one_each_per_fold() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let plan = stratified_kfold(&labels, 5, 7).unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.len(), 2);
            let classes: Vec<usize> = fold.iter().map(|&i| labels[i]).collect();
            assert!(classes.contains(&0) && classes.contains(&1));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<usize> = (0..97).map(|i| i % 4).collect();
        let a = stratified_kfold(&labels, 5, 42).unwrap();
        let b = stratified_kfold(&labels, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&labels, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_class_is_an_input_error() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1];
        let err = stratified_kfold(&labels, 5, 0).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(err.to_string().contains("class 1"), "{err}");
    }
}
