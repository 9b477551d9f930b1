//! Aggregated estimator, its variance, and the federated survival curve.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{CellData, Resampling, SourceCell, TargetCell};
use super::stats::{fed_variance, Centering};
use super::weights::{choose_lambda, solve_weights, solve_weights_bootstrap, FedConfig, WeightSolution};
use crate::eif::{EstimateWithCI, InfluenceTable};
use crate::error::{Error, Result};
use crate::nuisance::BundleMode;
use crate::seed::SeedStream;
use crate::survival::{isotonic_correct, CurveKind, StepCurve, TimeGrid};

/// How the weights are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Plain,
    Bootstrap,
}

/// Weighted estimate and plug-in standard error (before any monotone
/// correction).
pub fn fed_estimate(cell: &CellData, weights: &WeightSolution) -> Result<(f64, f64)> {
    let cent = Centering::from_sums(&cell.full)?;
    if weights.eta.len() != cent.active.len() + 1 {
        return Err(Error::invalid("weights do not match the cell's sites"));
    }
    let mut theta = weights.eta[0] * cent.theta0;
    for (k, &on) in cent.active.iter().enumerate() {
        if on {
            theta += weights.eta[k + 1] * cent.theta[k];
        }
    }
    let v = fed_variance(&cell.full, &cent, &weights.eta[1..]);
    Ok((theta, (v / cent.n).sqrt()))
}

/// One grid point of a federated curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedPoint {
    pub t: f64,
    pub a: u8,
    /// Weighted estimate before the monotone correction.
    pub theta_raw: f64,
    /// Corrected estimate with its interval.
    pub estimate: EstimateWithCI,
    pub weights: WeightSolution,
    /// `theta^0` followed by `theta^{k,0}` (`None` for inactive sources).
    pub site_theta: Vec<Option<f64>>,
    /// Set when this point fell back to the target-only estimate.
    pub error: Option<String>,
}

/// Federated estimates over a grid for both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedCurveEstimate {
    pub grid: Vec<f64>,
    pub method: WeightMethod,
    /// `points[a][j]`.
    pub points: [Vec<FedPoint>; 2],
}

impl FedCurveEstimate {
    pub fn point(&self, j: usize, a: u8) -> &FedPoint {
        &self.points[a as usize][j]
    }

    /// The corrected survival curve of arm `a`.
    pub fn curve(&self, a: u8) -> Vec<f64> {
        self.points[a as usize].iter().map(|p| p.estimate.theta).collect()
    }

    /// Writes `(t, a, site, eta, chi_sq, lambda)` rows.
    pub fn write_weights_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "a", "site", "eta", "chi_sq", "lambda"])?;
        for arm in &self.points {
            for p in arm {
                for (k, eta) in p.weights.eta.iter().enumerate() {
                    let chi = if k == 0 { 0.0 } else { p.weights.chi_sq[k - 1] };
                    w.write_record([
                        p.t.to_string(),
                        p.a.to_string(),
                        k.to_string(),
                        eta.to_string(),
                        chi.to_string(),
                        p.weights.lambda.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn point(cell: &CellData, t: f64, a: u8, cfg: &FedConfig, method: WeightMethod) -> Result<(WeightSolution, f64, f64)> {
    let choice = choose_lambda(cell, &cfg.lambda_grid)?;
    let mut w = match method {
        WeightMethod::Plain => solve_weights(cell, t, a, choice.lambda)?,
        WeightMethod::Bootstrap => solve_weights_bootstrap(cell, t, a, choice.lambda)?,
    };
    if choice.degenerate {
        w.notes.push("penalty cross-validation degenerate; median penalty used".into());
    }
    let (theta, se) = fed_estimate(cell, &w)?;
    Ok((w, theta, se))
}

fn target_only(cell: &CellData, t: f64, a: u8) -> Result<(WeightSolution, f64, f64)> {
    let cent = Centering::from_sums(&cell.full)?;
    let mut eta = vec![0.0; cent.active.len() + 1];
    eta[0] = 1.0;
    let w = WeightSolution {
        t,
        a,
        eta,
        lambda: f64::INFINITY,
        chi_sq: cent.chi_sq(),
        active: cent.active.clone(),
        objective: f64::NAN,
        kkt_gap: 0.0,
        bootstrap_skipped: 0,
        notes: vec![],
    };
    let (theta, se) = fed_estimate(cell, &w)?;
    Ok((w, theta, se))
}

/// Runs the weighting at every grid point of both arms, then applies the
/// monotone correction per arm. `cells[a][j]` holds the statistics of
/// cell `(grid[j], a)`. A point whose weighting fails falls back to the
/// target-only estimate and records the error.
pub fn fed_curve(
    grid: &Arc<TimeGrid>,
    cells: &[Vec<CellData>; 2],
    cfg: &FedConfig,
    method: WeightMethod,
) -> Result<FedCurveEstimate> {
    cfg.validate()?;
    let l = grid.len();
    if cells.iter().any(|c| c.len() != l) {
        return Err(Error::invalid("cell statistics do not cover the grid"));
    }
    let mut points: [Vec<FedPoint>; 2] = [Vec::new(), Vec::new()];
    for a in 0..2u8 {
        let raw: Vec<(WeightSolution, f64, f64, Option<String>)> = (0..l)
            .into_par_iter()
            .map(|j| {
                let t = grid.points()[j];
                let cell = &cells[a as usize][j];
                match point(cell, t, a, cfg, method) {
                    Ok((w, th, se)) => Ok((w, th, se, None)),
                    Err(e @ (Error::Numerical(_) | Error::BootstrapDegenerate { .. })) => {
                        log::warn!("t = {t}, a = {a}: {e}; using the target-only estimate");
                        let (w, th, se) = target_only(cell, t, a)?;
                        Ok((w, th, se, Some(e.to_string())))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let curve = StepCurve::new(grid.clone(), raw.iter().map(|r| r.1).collect(), CurveKind::Survival)?;
        let corrected = isotonic_correct(&curve);
        points[a as usize] = raw
            .into_iter()
            .enumerate()
            .map(|(j, (w, th, se, error))| {
                let cent = Centering::from_sums(&cells[a as usize][j].full).expect("checked above");
                let n_eff = cent.n as usize;
                FedPoint {
                    t: grid.points()[j],
                    a,
                    theta_raw: th,
                    estimate: EstimateWithCI::wald(corrected.values()[j], se, n_eff),
                    site_theta: std::iter::once(Some(cent.theta0))
                        .chain(cent.theta.iter().zip(&cent.active).map(|(t, &on)| on.then_some(*t)))
                        .collect(),
                    weights: w,
                    error,
                }
            })
            .collect();
    }
    Ok(FedCurveEstimate {
        grid: grid.points().to_vec(),
        method,
        points,
    })
}

/// Per-site row positions of a table, in dataset order.
fn site_rows(table: &InfluenceTable) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); table.n_sites()];
    for (i, &s) in table.site().iter().enumerate() {
        rows[s].push(i);
    }
    rows
}

/// Builds the cell statistics of every grid point from a federated
/// influence table, using the same resampling layout the sites derive
/// from `seed` in a distributed run.
pub fn cells_from_table(table: &InfluenceTable, cfg: &FedConfig, seed: &SeedStream) -> Result<[Vec<CellData>; 2]> {
    if table.mode() != BundleMode::Federated {
        return Err(Error::WrongBundleMode);
    }
    let rows = site_rows(table);
    let res = Resampling::new(table.site_counts(), cfg.cv_folds, cfg.bootstrap, seed);
    let l = table.grid().len();
    let build = |j: usize, a: u8| -> CellData {
        let anchor = table.anchor(j, a);
        let aug = table.aug(j, a);
        let pick = |v: &[f64], r: &[usize]| -> Vec<f64> { r.iter().map(|&i| v[i]).collect() };
        let boot_of = |k: usize| -> Vec<&[f64]> { res.boot.iter().map(|b| b[k].as_slice()).collect() };
        let target = TargetCell::compute(
            &pick(anchor, &rows[0]),
            &pick(aug, &rows[0]),
            &res.cv[0],
            cfg.cv_folds,
            &boot_of(0),
        );
        let sources: Vec<Option<SourceCell>> = (1..table.n_sites())
            .map(|k| {
                (!rows[k].is_empty())
                    .then(|| SourceCell::compute(&pick(aug, &rows[k]), &res.cv[k], cfg.cv_folds, &boot_of(k)))
            })
            .collect();
        let refs: Vec<Option<&SourceCell>> = sources.iter().map(Option::as_ref).collect();
        CellData::assemble(&target, &refs)
    };
    let arm = |a: u8| -> Vec<CellData> { (0..l).into_par_iter().map(|j| build(j, a)).collect() };
    Ok([arm(0), arm(1)])
}
