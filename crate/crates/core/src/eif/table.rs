//! Per-observation influence-function values for every grid cell.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::hfunc::h_process;
use super::variance::EstimateWithCI;
use crate::error::{Error, Result};
use crate::nuisance::{BundleMode, NuisanceBundle};
use crate::survival::TimeGrid;

/// Which estimator a slice of the table belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    /// Target-only estimator.
    Target,
    /// Pooled common-conditional-outcome estimator.
    Ccod,
    /// Site-`k` transported estimator (`k >= 1`).
    Site(usize),
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorId::Target => write!(f, "TGT"),
            EstimatorId::Ccod => write!(f, "CCOD"),
            EstimatorId::Site(k) => write!(f, "SITE{k}"),
        }
    }
}

/// Augmentation term `scale * S(t) * H(t)` of one observation over the
/// grid, where `scale` is the row's density-ratio (or membership) weight
/// over its propensity for the observed arm.
pub fn augmentation_row(y_index: usize, event: bool, s: &[f64], g: &[f64], scale: f64, out: &mut [f64]) {
    h_process(y_index, event, s, g, out);
    for (o, sj) in out.iter_mut().zip(s) {
        *o *= scale * sj;
    }
}

/// Anchor and augmentation terms of the EIFs for every `(t, a)` cell.
///
/// Every EIF here has the shape
/// `phi_i = 1{R_i = 0}/p_0 * anchor_i - c_i * aug_i`, where `anchor` is the
/// outcome-model prediction on target rows and `aug` the inverse-weighted
/// martingale term. The centered value subtracts `theta * 1{R_i = 0}/p_0`, which
/// has mean `theta` and keeps every centered EIF supported on the target
/// rows plus the rows of the sites it draws on.
#[derive(Debug, Clone)]
pub struct InfluenceTable {
    mode: BundleMode,
    grid: Arc<TimeGrid>,
    site: Vec<usize>,
    site_counts: Vec<usize>,
    /// Empirical site proportions `n_k / n`.
    p: Vec<f64>,
    /// Cell-major: `anchor[a][j * n + i]`.
    anchor: [Vec<f64>; 2],
    aug: [Vec<f64>; 2],
    /// Sites without a single row in arm `a` (augmentation identically 0).
    empty_arm: [Vec<bool>; 2],
}

impl InfluenceTable {
    /// Builds the table from a nuisance bundle. Federated bundles yield the
    /// target-only and site-specific EIFs; CCOD bundles the pooled EIF.
    pub fn from_bundle(bundle: &NuisanceBundle) -> Result<Self> {
        let n = bundle.len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        if bundle.site_counts[0] == 0 {
            return Err(Error::EmptyTarget);
        }
        let l = bundle.grid.len();
        let p: Vec<f64> = bundle.site_counts.iter().map(|&c| c as f64 / n as f64).collect();
        let mut anchor = [vec![0.0; n * l], vec![0.0; n * l]];
        let mut aug = [vec![0.0; n * l], vec![0.0; n * l]];
        let mut h = vec![0.0; l];
        for i in 0..n {
            if bundle.site[i] == 0 {
                for a in 0..2u8 {
                    let s = bundle.surv_row(a, i);
                    for j in 0..l {
                        anchor[a as usize][j * n + i] = s[j];
                    }
                }
            }
            let a = bundle.a[i];
            let scale = match bundle.mode {
                BundleMode::Federated => bundle.omega.as_ref().map_or(1.0, |w| w[i]),
                BundleMode::Ccod => bundle.q.as_ref().map_or(1.0, |q| q[i]),
            } / bundle.propensity(a, i);
            let s = bundle.surv_row(a, i);
            augmentation_row(bundle.y_index[i], bundle.delta[i] == 1, s, bundle.cens_row(i), scale, &mut h);
            let col = &mut aug[a as usize];
            for j in 0..l {
                col[j * n + i] = h[j];
            }
        }
        let mut empty_arm = [vec![true; bundle.n_sites], vec![true; bundle.n_sites]];
        for i in 0..n {
            empty_arm[bundle.a[i] as usize][bundle.site[i]] = false;
        }
        Ok(InfluenceTable {
            mode: bundle.mode,
            grid: bundle.grid.clone(),
            site: bundle.site.clone(),
            site_counts: bundle.site_counts.clone(),
            p,
            anchor,
            aug,
            empty_arm,
        })
    }

    pub fn mode(&self) -> BundleMode {
        self.mode
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.site.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site.is_empty()
    }

    pub fn n_sites(&self) -> usize {
        self.site_counts.len()
    }

    pub fn site(&self) -> &[usize] {
        &self.site
    }

    pub fn site_counts(&self) -> &[usize] {
        &self.site_counts
    }

    pub fn site_proportions(&self) -> &[f64] {
        &self.p
    }

    /// Anchor column of cell `(j, a)`: the outcome prediction on target rows, 0 elsewhere.
    pub fn anchor(&self, j: usize, a: u8) -> &[f64] {
        let n = self.len();
        &self.anchor[a as usize][j * n..(j + 1) * n]
    }

    /// Augmentation column of cell `(j, a)`.
    pub fn aug(&self, j: usize, a: u8) -> &[f64] {
        let n = self.len();
        &self.aug[a as usize][j * n..(j + 1) * n]
    }

    /// True when site `k` has no row in arm `a`, so its augmentation is 0.
    pub fn arm_empty(&self, k: usize, a: u8) -> bool {
        self.empty_arm[a as usize][k]
    }

    /// The estimators this table supports.
    pub fn estimators(&self) -> Vec<EstimatorId> {
        match self.mode {
            BundleMode::Ccod => vec![EstimatorId::Ccod],
            BundleMode::Federated => std::iter::once(EstimatorId::Target)
                .chain((1..self.n_sites()).filter(|&k| self.site_counts[k] > 0).map(EstimatorId::Site))
                .collect(),
        }
    }

    fn check(&self, e: EstimatorId, j: usize) -> Result<()> {
        if j >= self.grid.len() {
            return Err(Error::invalid(format!("grid index {j} out of range")));
        }
        let ok = match (self.mode, e) {
            (BundleMode::Ccod, EstimatorId::Ccod) => true,
            (BundleMode::Federated, EstimatorId::Target) => true,
            (BundleMode::Federated, EstimatorId::Site(k)) => k >= 1 && k < self.n_sites() && self.site_counts[k] > 0,
            _ => false,
        };
        if !ok {
            return Err(match (self.mode, e) {
                (BundleMode::Federated, EstimatorId::Site(k)) if k < self.n_sites() => Error::EmptySite(k),
                (BundleMode::Federated, EstimatorId::Ccod) | (BundleMode::Ccod, _) => Error::WrongBundleMode,
                _ => Error::EmptyTable,
            });
        }
        Ok(())
    }

    /// Uncentered EIF values of `e` at cell `(j, a)`.
    pub fn phi(&self, e: EstimatorId, j: usize, a: u8) -> Result<Vec<f64>> {
        self.check(e, j)?;
        let anchor = self.anchor(j, a);
        let aug = self.aug(j, a);
        let p0 = self.p[0];
        Ok((0..self.len())
            .map(|i| {
                let r = self.site[i];
                let anchor_term = if r == 0 { anchor[i] / p0 } else { 0.0 };
                let aug_term = match e {
                    EstimatorId::Ccod => aug[i] / p0,
                    EstimatorId::Target if r == 0 => aug[i] / p0,
                    EstimatorId::Site(k) if r == k => aug[i] / self.p[k],
                    _ => 0.0,
                };
                anchor_term - aug_term
            })
            .collect())
    }

    /// Point estimate: the mean of the uncentered EIF.
    pub fn theta(&self, e: EstimatorId, j: usize, a: u8) -> Result<f64> {
        let phi = self.phi(e, j, a)?;
        Ok(phi.iter().sum::<f64>() / phi.len() as f64)
    }

    /// Centered EIF values `phi - theta * 1{R = 0}/p_0`; their mean is zero.
    pub fn phi_centered(&self, e: EstimatorId, j: usize, a: u8) -> Result<Vec<f64>> {
        let mut phi = self.phi(e, j, a)?;
        let theta = phi.iter().sum::<f64>() / phi.len() as f64;
        let shift = theta / self.p[0];
        for (v, &r) in phi.iter_mut().zip(&self.site) {
            if r == 0 {
                *v -= shift;
            }
        }
        Ok(phi)
    }

    /// Point estimate with the plug-in standard error `sqrt(mean(phi*^2) / n)`.
    pub fn estimate(&self, e: EstimatorId, j: usize, a: u8) -> Result<EstimateWithCI> {
        let theta = self.theta(e, j, a)?;
        let c = self.phi_centered(e, j, a)?;
        let n = c.len() as f64;
        let var = c.iter().map(|v| v * v).sum::<f64>() / n;
        Ok(EstimateWithCI::wald(theta, (var / n).sqrt(), c.len()))
    }

    /// `theta^{k,0} - theta^0`.
    pub fn discrepancy(&self, k: usize, j: usize, a: u8) -> Result<f64> {
        Ok(self.theta(EstimatorId::Site(k), j, a)? - self.theta(EstimatorId::Target, j, a)?)
    }

    /// Writes `(i, site, estimator, t, a, phi_uncentered, phi_centered)` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "site", "estimator", "t", "a", "phi_uncentered", "phi_centered"])?;
        for e in self.estimators() {
            for a in 0..2u8 {
                for j in 0..self.grid.len() {
                    let phi = self.phi(e, j, a)?;
                    let cen = self.phi_centered(e, j, a)?;
                    let t = self.grid.points()[j];
                    for i in 0..self.len() {
                        w.write_record([
                            i.to_string(),
                            self.site[i].to_string(),
                            e.to_string(),
                            t.to_string(),
                            a.to_string(),
                            phi[i].to_string(),
                            cen[i].to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
