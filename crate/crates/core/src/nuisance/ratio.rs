//! Density ratios `p(x | target) / p(x | source)` for transporting source
//! rows to the target covariate distribution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::logistic::LogisticModel;
use crate::error::{Error, Result};

/// Sample size, mean and covariance of one site's covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteCovariateSummary {
    pub site: usize,
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl SiteCovariateSummary {
    /// Mean and (divisor `n`) covariance of `rows`.
    pub fn from_rows(site: usize, rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptySite(site));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                mean[j] += r[j] / n as f64;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for r in rows {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n as f64;
                }
            }
        }
        Ok(SiteCovariateSummary { site, n, mean, cov })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.n == 0 {
            return Err(Error::invalid("covariate summary with n = 0"));
        }
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("covariate summary has a malformed covariance"));
        }
        for i in 0..d {
            for j in 0..d {
                if (self.cov[i][j] - self.cov[j][i]).abs() > 1e-9 * (1.0 + self.cov[i][j].abs()) {
                    return Err(Error::invalid("covariate summary covariance is not symmetric"));
                }
            }
        }
        Ok(())
    }
}

/// Log-linear ratio `omega(x) = exp(alpha + beta'x)`, clipped on evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub cap: f64,
}

impl RatioModel {
    pub fn identity(dim: usize, cap: f64) -> Self {
        RatioModel {
            alpha: 0.0,
            beta: vec![0.0; dim],
            cap,
        }
    }

    pub fn raw(&self, x: &[f64]) -> f64 {
        (self.alpha + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()).exp()
    }

    /// `omega(x)` clipped to `[1/cap, cap]`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(1.0 / self.cap, self.cap)
    }
}

/// Logistic discrimination of target (label 1) against source rows, inverted
/// by Bayes' rule: `omega = p/(1-p) * n_source/n_target`.
pub fn fit_density_ratio_pooled(target_x: &[&[f64]], source_x: &[&[f64]], cap: f64) -> Result<RatioModel> {
    if target_x.is_empty() || source_x.is_empty() {
        return Err(Error::invalid("density ratio needs rows from both sites"));
    }
    let d = target_x[0].len();
    if target_x.iter().chain(source_x).any(|r| r.len() != d) {
        return Err(Error::invalid("density ratio inputs differ in dimension"));
    }
    let rows: Vec<&[f64]> = target_x.iter().chain(source_x).copied().collect();
    let labels: Vec<bool> = (0..rows.len()).map(|i| i < target_x.len()).collect();
    let m = LogisticModel::fit(&rows, &labels, None, true, 1e-8)?;
    Ok(RatioModel {
        alpha: m.coef[0] + (source_x.len() as f64 / target_x.len() as f64).ln(),
        beta: m.coef[1..].to_vec(),
        cap,
    })
}

/// Exponential tilt of a Gaussian working model for the source covariates
/// whose weighted moments `E_s[omega (1, X)]` match `(1, mean_target)`.
pub fn fit_density_ratio_coarse(target: &SiteCovariateSummary, source: &SiteCovariateSummary, cap: f64) -> Result<RatioModel> {
    target.validate()?;
    source.validate()?;
    let d = target.mean.len();
    if source.mean.len() != d {
        return Err(Error::invalid("covariate summaries differ in dimension"));
    }
    let mu_s = DVector::from_column_slice(&source.mean);
    let mu_t = DVector::from_column_slice(&target.mean);
    let sigma = DMatrix::from_fn(d, d, |i, j| source.cov[i][j]);

    // Unknowns theta = (alpha, beta). Under X ~ N(mu_s, sigma):
    //   E[omega] = exp(alpha + beta'mu_s + beta'sigma beta / 2) =: m0
    //   E[omega X] = m0 (mu_s + sigma beta)
    let mut alpha = 0.0;
    let mut beta = DVector::<f64>::zeros(d);
    for _ in 0..100 {
        let shift = &mu_s + &sigma * &beta;
        let m0 = (alpha + beta.dot(&mu_s) + 0.5 * beta.dot(&(&sigma * &beta))).exp();
        if !m0.is_finite() {
            break;
        }
        let mut f = DVector::<f64>::zeros(d + 1);
        f[0] = m0 - 1.0;
        for j in 0..d {
            f[j + 1] = m0 * shift[j] - mu_t[j];
        }
        if f.amax() < 1e-12 {
            return Ok(RatioModel {
                alpha,
                beta: beta.iter().copied().collect(),
                cap,
            });
        }
        // Jacobian of (m0, m0 shift) in (alpha, beta).
        let mut jac = DMatrix::<f64>::zeros(d + 1, d + 1);
        jac[(0, 0)] = m0;
        for j in 0..d {
            jac[(0, j + 1)] = m0 * shift[j];
            jac[(j + 1, 0)] = m0 * shift[j];
            for l in 0..d {
                jac[(j + 1, l + 1)] = m0 * (sigma[(j, l)] + shift[j] * shift[l]);
            }
        }
        let step = match jac.lu().solve(&f) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => break,
        };
        alpha -= step[0];
        for j in 0..d {
            beta[j] -= step[j + 1];
        }
    }
    Err(Error::CoarseRatioFailure(format!(
        "tilting equations did not converge for site {}",
        source.site
    )))
}
