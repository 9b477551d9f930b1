//! Penalty selection and the (optionally bootstrapped) weight solution.

use serde::{Deserialize, Serialize};

use super::cell::CellData;
use super::solver::solve_simplex;
use super::stats::{quadratic, residual_score, CellSums, Centering};
use crate::error::{Error, Result};

/// `{0} U {10^-2, .., 10^4}` (12 values). Each is `lambda / n`, so the
/// penalty applied is `value * chi^2`.
pub fn default_lambda_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..11).map(|i| 10f64.powf(-2.0 + 0.6 * i as f64)))
        .collect()
}

/// Weighting configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    /// Penalty values per unit of sample size.
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Bootstrap replicates for the averaged weights; 0 disables.
    pub bootstrap: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            lambda_grid: default_lambda_grid(),
            cv_folds: 5,
            bootstrap: 200,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::invalid("lambda_grid must not be empty"));
        }
        if self.lambda_grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid("lambda_grid values must be finite and non-negative"));
        }
        if self.cv_folds < 2 {
            return Err(Error::invalid("cv_folds must be at least 2"));
        }
        Ok(())
    }
}

/// Federated weights at one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub t: f64,
    pub a: u8,
    /// `eta^0, .., eta^{K-1}`; inactive sources get 0.
    pub eta: Vec<f64>,
    /// The penalty `lambda` (already multiplied by `n`).
    pub lambda: f64,
    /// `(chi^k)^2` for `k >= 1`, 0 for inactive sources.
    pub chi_sq: Vec<f64>,
    pub active: Vec<bool>,
    pub objective: f64,
    /// Duality gap of the solve; for bootstrap weights, the largest gap
    /// over the replicate solves.
    pub kkt_gap: f64,
    pub bootstrap_skipped: usize,
    pub notes: Vec<String>,
}

/// Result of the penalty cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    /// Chosen grid value (penalty per unit of sample size).
    pub scaled: f64,
    pub lambda: f64,
    pub scores: Vec<f64>,
    pub degenerate: bool,
}

fn median(grid: &[f64]) -> f64 {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g[(g.len() - 1) / 2]
}

/// Cross-validates the penalty: for each grid value, weights are solved on
/// the training folds' quadratic and scored by the mean squared residual on
/// the held-out fold. The EIFs keep their full-sample centering throughout.
/// Ties go to the largest penalty.
pub fn choose_lambda(cell: &CellData, grid: &[f64]) -> Result<LambdaChoice> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    let cent = Centering::from_sums(&cell.full)?;
    let n = cent.n;
    if grid.len() == 1 {
        return Ok(LambdaChoice {
            scaled: grid[0],
            lambda: grid[0] * n,
            scores: vec![],
            degenerate: false,
        });
    }
    let fallback = |scores| {
        let g = median(grid);
        Ok(LambdaChoice {
            scaled: g,
            lambda: g * n,
            scores,
            degenerate: true,
        })
    };
    if cent.active_sources().is_empty() {
        return Ok(LambdaChoice {
            scaled: grid[0],
            lambda: grid[0] * n,
            scores: vec![],
            degenerate: false,
        });
    }
    let mut scores = vec![0.0; grid.len()];
    for val in &cell.folds {
        let train = cell.full.minus(val);
        if val.total_weight() <= 0.0 || train.target.w <= 0.0 {
            return fallback(vec![]);
        }
        let mut q = quadratic(&cent, &train)?;
        q.n = n;
        for (g, score) in grid.iter().zip(scores.iter_mut()) {
            let sol = solve_simplex(&q, g * n)?;
            *score += residual_score(&cent, val, &expand(&sol.z, &q.sources, cent.active.len())) / cell.folds.len() as f64;
        }
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return fallback(scores);
    }
    let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * best.abs().max(1e-300);
    let (scaled, _) = grid
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s <= best + tol)
        .max_by(|a, b| a.0.total_cmp(b.0))
        .expect("grid is non-empty");
    Ok(LambdaChoice {
        scaled: *scaled,
        lambda: scaled * n,
        scores,
        degenerate: false,
    })
}

/// Source weights (`k - 1` indexing) from a solver vector over active sources.
fn expand(z: &[f64], sources: &[usize], k: usize) -> Vec<f64> {
    let mut eta = vec![0.0; k];
    for (i, &s) in sources.iter().enumerate() {
        eta[s] = z[i + 1];
    }
    eta
}

fn full_eta(z: &[f64], sources: &[usize], k: usize) -> Vec<f64> {
    std::iter::once(z[0]).chain(expand(z, sources, k)).collect()
}

fn solve_sums(sums: &CellSums, lambda: f64) -> Result<(Vec<f64>, f64, f64, Centering)> {
    let cent = Centering::from_sums(sums)?;
    let q = quadratic(&cent, sums)?;
    let sol = solve_simplex(&q, lambda)?;
    Ok((full_eta(&sol.z, &q.sources, cent.active.len()), sol.objective, sol.gap, cent))
}

/// Minimizes the penalized objective on the full sample at `lambda`.
pub fn solve_weights(cell: &CellData, t: f64, a: u8, lambda: f64) -> Result<WeightSolution> {
    let (eta, objective, gap, cent) = solve_sums(&cell.full, lambda)?;
    Ok(WeightSolution {
        t,
        a,
        eta,
        lambda,
        chi_sq: cent.chi_sq(),
        active: cent.active.clone(),
        objective,
        kkt_gap: gap,
        bootstrap_skipped: 0,
        notes: vec![],
    })
}

/// Averages the weights solved on each bootstrap replicate (re-centered per
/// replicate, penalty fixed) and renormalizes onto the simplex.
pub fn solve_weights_bootstrap(cell: &CellData, t: f64, a: u8, lambda: f64) -> Result<WeightSolution> {
    let total = cell.boot.len();
    if total == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    let base = Centering::from_sums(&cell.full)?;
    let k = base.active.len();
    let mut acc = vec![0.0; k + 1];
    let mut skipped = 0;
    let mut worst_gap: f64 = 0.0;
    for rep in &cell.boot {
        let usable = rep.is_finite()
            && rep.target.w > 0.0
            && rep
                .sources
                .iter()
                .zip(&base.active)
                .all(|(m, &on)| !on || m.is_some_and(|m| m.n > 0.0));
        if !usable {
            skipped += 1;
            continue;
        }
        match solve_sums(rep, lambda) {
            Ok((eta, _, gap, _)) => {
                acc.iter_mut().zip(&eta).for_each(|(a, e)| *a += e);
                worst_gap = worst_gap.max(gap);
            }
            Err(Error::Numerical(msg)) => {
                log::debug!("bootstrap replicate skipped: {msg}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if skipped * 10 > total || skipped == total {
        return Err(Error::BootstrapDegenerate { skipped, total });
    }
    let s: f64 = acc.iter().sum();
    let eta: Vec<f64> = acc.iter().map(|v| v / s).collect();
    let q = quadratic(&base, &cell.full)?;
    let z: Vec<f64> = std::iter::once(eta[0]).chain(q.sources.iter().map(|&i| eta[i + 1])).collect();
    let mut notes = vec![];
    if skipped > 0 {
        notes.push(format!("{skipped} of {total} bootstrap replicates skipped"));
    }
    Ok(WeightSolution {
        t,
        a,
        objective: q.value(&z[1..], lambda),
        eta,
        lambda,
        chi_sq: base.chi_sq(),
        active: base.active.clone(),
        kkt_gap: worst_gap,
        bootstrap_skipped: skipped,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedopt::cell::{bootstrap_weights, cv_labels, SourceCell, TargetCell};
    use crate::seed::SeedStream;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(boot: usize, shift: f64) -> CellData {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seed = SeedStream::new(5);
        let n0 = 60;
        let s: Vec<f64> = (0..n0).map(|_| rng.random_range(0.3..0.9)).collect();
        let x: Vec<f64> = (0..n0).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bw: Vec<Vec<f64>> = (0..boot).map(|b| bootstrap_weights(n0, 0, b, &seed)).collect();
        let br: Vec<&[f64]> = bw.iter().map(Vec::as_slice).collect();
        let target = TargetCell::compute(&s, &x, &cv_labels(n0, 5, 0, &seed), 5, &br);
        let sources: Vec<SourceCell> = (1..3)
            .map(|k| {
                let nk = 80;
                let aug: Vec<f64> = (0..nk).map(|_| rng.random_range(-1.0..1.0) + shift * k as f64).collect();
                let bw: Vec<Vec<f64>> = (0..boot).map(|b| bootstrap_weights(nk, k, b, &seed)).collect();
                let br: Vec<&[f64]> = bw.iter().map(Vec::as_slice).collect();
                SourceCell::compute(&aug, &cv_labels(nk, 5, k, &seed), 5, &br)
            })
            .collect();
        let refs: Vec<Option<&SourceCell>> = sources.iter().map(Some).collect();
        CellData::assemble(&target, &refs)
    }

    #[test]
    fn grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 12);
        assert!((g[1] - 0.01).abs() < 1e-15 && (g[11] - 1e4).abs() < 1e-8);
    }

    #[test]
    fn single_value_grid_is_returned() {
        let c = cell(0, 0.0);
        let ch = choose_lambda(&c, &[3.0]).unwrap();
        assert_eq!(ch.scaled, 3.0);
    }

    #[test]
    fn weights_lie_on_simplex() {
        let c = cell(20, 0.0);
        let ch = choose_lambda(&c, &default_lambda_grid()).unwrap();
        for sol in [
            solve_weights(&c, 1.0, 1, ch.lambda).unwrap(),
            solve_weights_bootstrap(&c, 1.0, 1, ch.lambda).unwrap(),
        ] {
            assert!((sol.eta.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!(sol.eta.iter().all(|&e| (0.0..=1.0).contains(&e)));
            assert!(sol.kkt_gap < 1e-8);
        }
    }

    #[test]
    fn shifted_sites_are_dropped_under_heavy_penalty() {
        let c = cell(0, 0.5);
        let sol = solve_weights(&c, 1.0, 1, 1e9).unwrap();
        assert_eq!(sol.eta, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn one_replicate_equals_plain_solve_on_it() {
        let c = cell(1, 0.0);
        let boot = solve_weights_bootstrap(&c, 1.0, 0, 5.0).unwrap();
        let single = CellData {
            full: c.boot[0].clone(),
            folds: vec![],
            boot: vec![],
        };
        let plain = solve_weights(&single, 1.0, 0, 5.0).unwrap();
        for (a, b) in boot.eta.iter().zip(&plain.eta) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
