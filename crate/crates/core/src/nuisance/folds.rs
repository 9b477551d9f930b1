use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::survival::Dataset;

/// Per-site partition of rows into `M` validation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    m: usize,
    fold_of: Vec<usize>,
    site_folds: Vec<Vec<Vec<usize>>>,
}

/// Fold labels for the `n` rows of one site, in local row order. Sites
/// compute this themselves in a federated run, so it depends only on the
/// site's size, id and the shared seed.
pub fn site_fold_labels(n: usize, m: usize, site: usize, seed: &SeedStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.child("folds").index(site as u64).rng());
    let mut labels = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        labels[i] = pos % m;
    }
    labels
}

pub fn check_fold_count(m: usize, min_site: usize) -> Result<()> {
    if m < 2 || m > min_site / 2 {
        return Err(Error::InvalidFoldCount { folds: m, min_site });
    }
    Ok(())
}

pub fn make_folds(data: &Dataset, m: usize, seed: &SeedStream) -> Result<FoldAssignment> {
    let counts = data.site_counts();
    let min_site = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    check_fold_count(m, min_site)?;
    let mut fold_of = vec![0; data.len()];
    let mut site_folds = vec![vec![Vec::new(); m]; data.n_sites()];
    for site in 0..data.n_sites() {
        let rows = data.site_indices(site);
        let labels = site_fold_labels(rows.len(), m, site, seed);
        for (&row, &f) in rows.iter().zip(&labels) {
            fold_of[row] = f;
            site_folds[site][f].push(row);
        }
    }
    Ok(FoldAssignment { m, fold_of, site_folds })
}

impl FoldAssignment {
    pub fn folds(&self) -> usize {
        self.m
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Dataset row indices of fold `f` at `site`.
    pub fn site_fold(&self, site: usize, f: usize) -> &[usize] {
        &self.site_folds[site][f]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::Observation;

    fn data(sizes: &[usize]) -> Dataset {
        let mut obs = Vec::new();
        for (k, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                obs.push(Observation::new(vec![i as f64], 0, 1.0, 1, k).unwrap());
            }
        }
        Dataset::new(obs, None).unwrap()
    }

    #[test]
    fn balanced_sizes() {
        let seed = SeedStream::new(4);
        let f = make_folds(&data(&[10, 11]), 2, &seed).unwrap();
        assert_eq!(f.site_fold(0, 0).len(), 5);
        assert_eq!(f.site_fold(0, 1).len(), 5);
        let mut s: Vec<usize> = (0..2).map(|j| f.site_fold(1, j).len()).collect();
        s.sort();
        assert_eq!(s, vec![5, 6]);
        let mut all: Vec<usize> = (0..2).flat_map(|j| f.site_fold(1, j).to_vec()).collect();
        all.sort();
        assert_eq!(all, (10..21).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_range_checked() {
        let d = data(&[12, 9]);
        let seed = SeedStream::new(11);
        assert_eq!(make_folds(&d, 3, &seed).unwrap(), make_folds(&d, 3, &seed).unwrap());
        assert!(matches!(make_folds(&d, 1, &seed), Err(Error::InvalidFoldCount { .. })));
        assert!(matches!(make_folds(&d, 5, &seed), Err(Error::InvalidFoldCount { min_site: 9, .. })));
        assert!(make_folds(&d, 4, &seed).is_ok());
    }
}
