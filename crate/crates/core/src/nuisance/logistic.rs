//! Ridge-stabilised logistic regression by Newton-IRLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 50;

/// Logistic model `P(y = 1 | x) = 1 / (1 + exp(-(b0 + b'x)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept followed by one coefficient per covariate.
    pub coef: Vec<f64>,
    /// The fit hit the iteration cap with an exploding linear predictor
    /// (complete or quasi-complete separation).
    pub separated: bool,
}

impl LogisticModel {
    pub fn intercept_only(p: f64, dim: usize) -> Self {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        let mut coef = vec![0.0; dim + 1];
        coef[0] = (p / (1.0 - p)).ln();
        LogisticModel { coef, separated: false }
    }

    pub fn dim(&self) -> usize {
        self.coef.len() - 1
    }

    pub fn linear(&self, x: &[f64]) -> f64 {
        self.coef[0] + self.coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }

    /// Fits on rows `x` with labels `y` and optional case weights. With
    /// `use_covariates = false` only the intercept is estimated.
    pub fn fit(x: &[&[f64]], y: &[bool], weights: Option<&[f64]>, use_covariates: bool, ridge: f64) -> Result<Self> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(Error::invalid("logistic fit needs matching nonempty rows and labels"));
        }
        let dim = x[0].len();
        if x.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("logistic rows differ in dimension"));
        }
        let w = |i: usize| weights.map_or(1.0, |w| w[i]);
        let total: f64 = (0..n).map(w).sum();
        let pos: f64 = (0..n).filter(|&i| y[i]).map(w).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("logistic weights sum to zero"));
        }
        if pos == 0.0 || pos == total {
            let mut m = LogisticModel::intercept_only(pos / total, dim);
            m.coef[0] = if pos == 0.0 { -40.0 } else { 40.0 };
            m.separated = true;
            return Ok(m);
        }
        if !use_covariates || dim == 0 {
            return Ok(LogisticModel::intercept_only(pos / total, dim));
        }

        // Standardise for conditioning; constant columns are dropped.
        let mut mean = vec![0.0; dim];
        let mut sd = vec![0.0; dim];
        for i in 0..n {
            for j in 0..dim {
                mean[j] += w(i) * x[i][j] / total;
            }
        }
        for i in 0..n {
            for j in 0..dim {
                sd[j] += w(i) * (x[i][j] - mean[j]).powi(2) / total;
            }
        }
        let cols: Vec<usize> = (0..dim)
            .filter(|&j| sd[j].sqrt() > 1e-12 * (1.0 + mean[j].abs()))
            .collect();
        for s in sd.iter_mut() {
            *s = s.sqrt();
        }
        let p = cols.len() + 1;
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut v = Vec::with_capacity(p);
                v.push(1.0);
                v.extend(cols.iter().map(|&j| (r[j] - mean[j]) / sd[j]));
                v
            })
            .collect();

        let mut b = DVector::<f64>::zeros(p);
        b[0] = (pos / (total - pos)).ln();
        let penalty = ridge * total;
        let objective = |b: &DVector<f64>| -> f64 {
            let mut ll = 0.0;
            for i in 0..n {
                let eta: f64 = z[i].iter().zip(b.iter()).map(|(a, c)| a * c).sum();
                ll += w(i) * (if y[i] { eta } else { 0.0 } - softplus(eta));
            }
            ll - 0.5 * penalty * b.rows(1, p - 1).norm_squared()
        };
        let mut current = objective(&b);
        let mut converged = false;
        for _ in 0..MAX_ITER {
            let mut grad = DVector::<f64>::zeros(p);
            let mut hess = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let eta: f64 = z[i].iter().zip(b.iter()).map(|(a, c)| a * c).sum();
                let mu = sigmoid(eta);
                let r = w(i) * ((y[i] as u8 as f64) - mu);
                let v = w(i) * mu * (1.0 - mu);
                for a in 0..p {
                    grad[a] += r * z[i][a];
                    for c in 0..=a {
                        hess[(a, c)] += v * z[i][a] * z[i][c];
                    }
                }
            }
            for a in 0..p {
                for c in 0..a {
                    hess[(c, a)] = hess[(a, c)];
                }
                if a > 0 {
                    grad[a] -= penalty * b[a];
                    hess[(a, a)] += penalty;
                }
            }
            hess[(0, 0)] += 1e-12 * total;
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => return Err(Error::Numerical("logistic information matrix is singular".into())),
            };
            let mut scale = 1.0;
            let mut next = &b + &step;
            let mut value = objective(&next);
            while !(value >= current - 1e-12 * current.abs()) && scale > 1e-10 {
                scale *= 0.5;
                next = &b + &step * scale;
                value = objective(&next);
            }
            let change = (&next - &b).amax();
            b = next;
            current = value;
            if change < 1e-10 {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!("logistic regression stopped at the iteration cap");
        }
        // Fitted probabilities numerically at 0 or 1 indicate (quasi-)separation.
        let separated = z.iter().any(|r| {
            let eta: f64 = r.iter().zip(b.iter()).map(|(a, c)| a * c).sum();
            eta.abs() > 15.0
        });

        let mut coef = vec![0.0; dim + 1];
        coef[0] = b[0];
        for (r, &j) in cols.iter().enumerate() {
            coef[j + 1] = b[r + 1] / sd[j];
            coef[0] -= b[r + 1] * mean[j] / sd[j];
        }
        Ok(LogisticModel {
            coef,
            separated,
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
