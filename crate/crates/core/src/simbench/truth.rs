//! Ground-truth target survival curves by brute-force simulation.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dgp::{draw_covariates, event_log_hazard, weibull_time};
use super::scenario::ScenarioSpec;
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::survival::TimeGrid;

/// Empirical `P(T^(a) > t)` over a simulated target population, with
/// binomial standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCurve {
    pub a: u8,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub n_super: usize,
}

impl TruthCurve {
    /// Value at an exact grid time.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.grid.iter().position(|&g| g == t).map(|j| self.values[j])
    }
}

/// Draws `n_super` target-site subjects and their potential event times
/// under treatment `a`. The same seed gives the same covariates and
/// uniforms for both arms.
pub fn truth_oracle(spec: &ScenarioSpec, grid: &Arc<TimeGrid>, a: u8, n_super: usize, seed: &SeedStream) -> Result<TruthCurve> {
    if n_super < 100_000 {
        return Err(Error::invalid("the truth oracle needs at least 1e5 draws"));
    }
    if a > 1 {
        return Err(Error::invalid("treatment must be 0 or 1"));
    }
    let knobs = spec.knobs(0);
    let mut rng = seed.child("truth").rng();
    let mut times: Vec<f64> = (0..n_super)
        .map(|_| {
            let x = draw_covariates(&mut rng, knobs.gamma);
            let u: f64 = rng.random();
            weibull_time(event_log_hazard(&x, a, &knobs), 1.0 - u)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let n = n_super as f64;
    let mut values = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for &t in grid.points() {
        let at_or_below = times.partition_point(|&v| v <= t);
        let p = (n_super - at_or_below) as f64 / n;
        values.push(p);
        se.push((p * (1.0 - p) / n).sqrt());
    }
    Ok(TruthCurve {
        a,
        grid: grid.points().to_vec(),
        values,
        se,
        n_super,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simbench::Scenario;

    #[test]
    fn starts_at_one_and_scales() {
        let spec = ScenarioSpec::new(Scenario::Homogeneous, 300, 600);
        let grid = Arc::new(TimeGrid::uniform(90.0, 30.0).unwrap());
        let s = SeedStream::new(2);
        let small = truth_oracle(&spec, &grid, 1, 100_000, &s).unwrap();
        let big = truth_oracle(&spec, &grid, 1, 400_000, &s).unwrap();
        assert_eq!(small.values[0], 1.0);
        let ratio = small.se[3] / big.se[3];
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
        // identical arms when the target has no treatment effect
        let zero = truth_oracle(&spec, &grid, 0, 100_000, &s).unwrap();
        assert_eq!(zero.values, small.values);
    }
}
