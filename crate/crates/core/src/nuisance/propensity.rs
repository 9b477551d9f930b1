use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::logistic::LogisticModel;
use crate::error::{Error, Result};
use crate::seed::SeedStream;

const RIDGE: f64 = 1e-8;
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

/// A binary-outcome regression chosen by cross-validated log loss between
/// an intercept-only and a linear logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub model: LogisticModel,
    pub linear: bool,
    /// Cross-validated log loss of (intercept-only, linear).
    pub cv_loss: (f64, f64),
    /// Only one class in training data, or separation: predictions sit on
    /// the clip boundary.
    pub degenerate: bool,
}

impl BinaryModel {
    /// Constant prediction `p`, flagged degenerate.
    pub fn constant(p: f64, dim: usize) -> Self {
        BinaryModel {
            model: LogisticModel::intercept_only(p, dim),
            linear: false,
            cv_loss: (f64::NAN, f64::NAN),
            degenerate: true,
        }
    }

    /// Predicted probability clipped to `[0.01, 0.99]`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.model.prob(x).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)
    }
}

fn log_loss(m: &LogisticModel, x: &[&[f64]], y: &[bool]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(r, &yi)| {
            let p = m.prob(r).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
            -(if yi { p.ln() } else { (1.0 - p).ln() })
        })
        .sum()
}

/// Fits `P(y = 1 | x)`; the linear model is kept only if its `v`-fold log
/// loss beats the intercept-only model.
pub fn fit_binary(x: &[&[f64]], y: &[bool], v: usize, seed: &SeedStream) -> Result<BinaryModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid("binary regression needs matching nonempty rows and labels"));
    }
    let pos = y.iter().filter(|b| **b).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegeneratePropensity(format!(
            "only one class among {} training rows",
            y.len()
        )));
    }
    let v = v.clamp(2, x.len());
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.shuffle(&mut seed.child("binary-cv").rng());
    let mut loss = (0.0, 0.0);
    for f in 0..v {
        let (mut tx, mut ty, mut hx, mut hy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (p, &i) in perm.iter().enumerate() {
            if p % v == f {
                hx.push(x[i]);
                hy.push(y[i]);
            } else {
                tx.push(x[i]);
                ty.push(y[i]);
            }
        }
        let m0 = LogisticModel::fit(&tx, &ty, None, false, RIDGE)?;
        let m1 = LogisticModel::fit(&tx, &ty, None, true, RIDGE)?;
        loss.0 += log_loss(&m0, &hx, &hy) / x.len() as f64;
        loss.1 += log_loss(&m1, &hx, &hy) / x.len() as f64;
    }
    let linear = loss.1 < loss.0;
    let model = LogisticModel::fit(x, y, None, linear, RIDGE)?;
    let degenerate = model.separated;
    Ok(BinaryModel {
        model,
        linear,
        cv_loss: loss,
        degenerate,
    })
}
