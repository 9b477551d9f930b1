use serde::{Deserialize, Serialize};

pub const Z_95: f64 = 1.959963984540054;

/// A point estimate with a Wald interval on the probability scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    /// The estimate clamped into `[0, 1]`.
    pub theta: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// False when the standard error is numerically zero (for instance before
    /// the first event); the interval then collapses to the point.
    pub ci_available: bool,
    pub n_effective: usize,
}

impl EstimateWithCI {
    pub fn wald(theta: f64, se: f64, n_effective: usize) -> Self {
        let se = if se.is_finite() { se.max(0.0) } else { f64::NAN };
        let theta = theta.clamp(0.0, 1.0);
        let ci_available = se > 1e-12;
        let (ci_lo, ci_hi) = if ci_available {
            ((theta - Z_95 * se).clamp(0.0, 1.0), (theta + Z_95 * se).clamp(0.0, 1.0))
        } else {
            (theta, theta)
        };
        EstimateWithCI {
            theta,
            se,
            ci_lo,
            ci_hi,
            ci_available,
            n_effective,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }

    pub fn width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}
