use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ObservationalDataset;
use crate::error::{invalid, Result};

/// Seeded permutation of `0..n` cut into `k` contiguous test folds.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(invalid(format!("cannot cut {n} rows into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| perm[f * n / k..(f + 1) * n / k].to_vec())
        .collect())
}

/// Train and test row indices of fold `fold` in the k-fold scheme with
/// `k = round(1 / (1 - fraction))`; `fraction = 0.9` gives ten folds.
pub fn split_indices(
    n: usize,
    fraction: f64,
    fold: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("train fraction {fraction} outside (0, 1)")));
    }
    let k = (1.0 / (1.0 - fraction)).round() as usize;
    if k < 2 {
        return Err(invalid(format!(
            "train fraction {fraction} leaves an empty side"
        )));
    }
    if fold >= k {
        return Err(invalid(format!("fold {fold} out of range for {k} folds")));
    }
    let folds = kfold_indices(n, k, seed)?;
    let test = folds[fold].clone();
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(invalid("split leaves an empty side"));
    }
    Ok((train, test))
}

pub fn split(
    dataset: &ObservationalDataset,
    fraction: f64,
    fold: usize,
    seed: u64,
) -> Result<(ObservationalDataset, ObservationalDataset)> {
    let (train, test) = split_indices(dataset.len(), fraction, fold, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_rows_nine_one() {
        let (train, test) = split_indices(10, 0.9, 3, 1).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
    }

    #[test]
    fn folds_cover_every_row_once() {
        let mut seen = vec![0; 1003];
        for f in 0..10 {
            let (train, test) = split_indices(1003, 0.9, f, 5).unwrap();
            assert_eq!(train.len() + test.len(), 1003);
            for i in test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn invalid_requests() {
        assert!(split_indices(10, 1.0, 0, 0).is_err());
        assert!(split_indices(10, 0.3, 0, 0).is_err());
        assert!(split_indices(10, 0.9, 10, 0).is_err());
        assert!(split_indices(3, 0.9, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint_exhaustive_and_seeded(n in 10usize..300, fold in 0usize..5, seed in any::<u64>()) {
            let (train, test) = split_indices(n, 0.8, fold, seed).unwrap();
            let again = split_indices(n, 0.8, fold, seed).unwrap();
            prop_assert_eq!(&(train.clone(), test.clone()), &again);
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
