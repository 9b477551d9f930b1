//! Per-cell statistics with their cross-validation and bootstrap splits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::{CellSums, Moments, TargetSums};
use crate::nuisance::site_fold_labels;
use crate::seed::SeedStream;

/// Validation-fold labels for the penalty cross-validation at one site.
/// Sites derive these locally from the shared seed.
pub fn cv_labels(n: usize, folds: usize, site: usize, seed: &SeedStream) -> Vec<usize> {
    site_fold_labels(n, folds, site, &seed.child("lambda-cv"))
}

/// Multiplicities of the `n` rows of `site` in bootstrap replicate `b`.
/// Resampling is stratified by site, so each site draws its own `n` rows.
pub fn bootstrap_weights(n: usize, site: usize, b: usize, seed: &SeedStream) -> Vec<f64> {
    let mut rng = seed.child("bootstrap").index(b as u64).index(site as u64).rng();
    let mut w = vec![0.0; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1.0;
    }
    w
}

/// Resampling layout for a whole dataset, per site in local row order.
#[derive(Debug, Clone)]
pub struct Resampling {
    pub cv: Vec<Vec<usize>>,
    /// `boot[b][site]`.
    pub boot: Vec<Vec<Vec<f64>>>,
    pub folds: usize,
}

impl Resampling {
    pub fn new(site_counts: &[usize], folds: usize, replicates: usize, seed: &SeedStream) -> Self {
        Resampling {
            cv: site_counts
                .iter()
                .enumerate()
                .map(|(k, &n)| cv_labels(n, folds, k, seed))
                .collect(),
            boot: (0..replicates)
                .map(|b| {
                    site_counts
                        .iter()
                        .enumerate()
                        .map(|(k, &n)| bootstrap_weights(n, k, b, seed))
                        .collect()
                })
                .collect(),
            folds,
        }
    }
}

/// Augmentation moments of one source site at one cell: full sample, each
/// validation fold, and each bootstrap replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCell {
    pub full: Moments,
    pub folds: Vec<Moments>,
    pub boot: Vec<Moments>,
}

impl SourceCell {
    pub fn compute(aug: &[f64], labels: &[usize], folds: usize, boot: &[&[f64]]) -> Self {
        let mut fm = vec![Moments::default(); folds];
        for (&v, &f) in aug.iter().zip(labels) {
            let m = &mut fm[f];
            m.n += 1.0;
            m.sum += v;
            m.sum_sq += v * v;
        }
        SourceCell {
            full: Moments::from_values(aug),
            folds: fm,
            boot: boot.iter().map(|w| Moments::weighted(aug, w)).collect(),
        }
    }
}

/// Target-row sums at one cell, with the same splits as [`SourceCell`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCell {
    pub full: TargetSums,
    pub folds: Vec<TargetSums>,
    pub boot: Vec<TargetSums>,
}

impl TargetCell {
    pub fn compute(s: &[f64], x: &[f64], labels: &[usize], folds: usize, boot: &[&[f64]]) -> Self {
        let mut fs = vec![TargetSums::default(); folds];
        for i in 0..s.len() {
            let t = &mut fs[labels[i]];
            t.w += 1.0;
            t.s += s[i];
            t.x += x[i];
            t.ss += s[i] * s[i];
            t.xx += x[i] * x[i];
            t.sx += s[i] * x[i];
        }
        TargetCell {
            full: TargetSums::weighted(s, x, None),
            folds: fs,
            boot: boot.iter().map(|w| TargetSums::weighted(s, x, Some(w))).collect(),
        }
    }
}

/// Everything the weighting step needs at one `(t, a)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellData {
    pub full: CellSums,
    pub folds: Vec<CellSums>,
    pub boot: Vec<CellSums>,
}

impl CellData {
    /// `sources[k - 1]` is `None` for a site that is empty or unavailable.
    pub fn assemble(target: &TargetCell, sources: &[Option<&SourceCell>]) -> Self {
        let pick = |f: &dyn Fn(&SourceCell) -> Moments| -> Vec<Option<Moments>> {
            sources.iter().map(|s| s.map(f)).collect()
        };
        CellData {
            full: CellSums {
                target: target.full,
                sources: pick(&|s| s.full),
            },
            folds: (0..target.folds.len())
                .map(|v| CellSums {
                    target: target.folds[v],
                    sources: pick(&|s| s.folds[v]),
                })
                .collect(),
            boot: (0..target.boot.len())
                .map(|b| CellSums {
                    target: target.boot[b],
                    sources: pick(&|s| s.boot[b]),
                })
                .collect(),
        }
    }

    /// The same cell with source `k` (1-based) removed.
    pub fn without_site(&self, k: usize) -> Self {
        let drop = |c: &CellSums| {
            let mut c = c.clone();
            c.sources[k - 1] = None;
            c
        };
        CellData {
            full: drop(&self.full),
            folds: self.folds.iter().map(drop).collect(),
            boot: self.boot.iter().map(drop).collect(),
        }
    }
}
