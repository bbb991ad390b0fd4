//! Random, balanced partition of observational indices into cross-fitting folds.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Maps each index `0..len` to a fold id in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    /// Builds an assignment from explicit fold ids (each in `0..k`).
    pub fn from_ids(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("number of folds must be positive"));
        }
        if let Some(bad) = fold_of.iter().find(|&&f| f >= k) {
            return Err(Error::invalid(format!("fold id {bad} out of range for k = {k}")));
        }
        Ok(Self { fold_of, k })
    }

    /// Single fold holding every index.
    pub fn single(len: usize) -> Self {
        Self {
            fold_of: vec![0; len],
            k: 1,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_of(&self, index: usize) -> usize {
        self.fold_of[index]
    }

    pub fn ids(&self) -> &[usize] {
        &self.fold_of
    }

    /// Indices assigned to `fold`, in increasing order.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == fold).then_some(i))
            .collect()
    }

    /// Indices outside `fold`, in increasing order.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f != fold).then_some(i))
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Shuffles `0..n_obs` uniformly and deals the permutation round-robin into
/// `k` folds, so fold sizes differ by at most one.
pub fn partition_folds(n_obs: usize, k: usize, rng: &mut RngStream) -> Result<FoldAssignment> {
    if k == 0 || k > n_obs {
        return Err(Error::invalid(format!(
            "need 1 <= k <= n_obs, got k = {k}, n_obs = {n_obs}"
        )));
    }
    let mut perm: Vec<usize> = (0..n_obs).collect();
    perm.shuffle(rng);
    let mut fold_of = vec![0; n_obs];
    for (pos, &idx) in perm.iter().enumerate() {
        fold_of[idx] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_division() {
        let f = partition_folds(10, 5, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
    }

    #[test]
    fn uneven_division() {
        let f = partition_folds(7, 3, &mut RngStream::new(1, 0)).unwrap();
        let mut s = f.sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 3]);
    }

    #[test]
    fn single_fold() {
        let f = partition_folds(10_000, 1, &mut RngStream::new(7, 0)).unwrap();
        assert_eq!(f.members(0).len(), 10_000);
        assert!(f.complement(0).is_empty());
    }

    #[test]
    fn rejects_bad_k() {
        assert!(partition_folds(5, 0, &mut RngStream::new(1, 0)).is_err());
        assert!(partition_folds(5, 6, &mut RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn deterministic_given_stream() {
        let a = partition_folds(100, 4, &mut RngStream::new(3, 9)).unwrap();
        let b = partition_folds(100, 4, &mut RngStream::new(3, 9)).unwrap();
        let c = partition_folds(100, 4, &mut RngStream::new(3, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn partition_is_balanced_bijection(n in 1usize..2000, k_raw in 1usize..20, seed in any::<u64>()) {
            let k = k_raw.min(n);
            let f = partition_folds(n, k, &mut RngStream::new(seed, 0)).unwrap();
            let sizes = f.sizes();
            let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(mx - mn <= 1);
            let mut seen = vec![false; n];
            for fold in 0..k {
                for i in f.members(fold) {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
