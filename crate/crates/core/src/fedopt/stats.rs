//! Sufficient statistics for one `(t, a)` cell.
//!
//! Everything the weighting step needs (site estimates, the quadratic of
//! the objective, validation scores and the plug-in variance) is a function
//! of six weighted sums over target rows and three per source site. The
//! coordinator of a federated run computes the target sums itself and
//! receives the source moments over the wire.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted first and second moments of one source site's augmentation values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// Total weight (row count when unweighted).
    pub n: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn from_values(values: &[f64]) -> Self {
        values.iter().fold(Moments::default(), |m, &v| Moments {
            n: m.n + 1.0,
            sum: m.sum + v,
            sum_sq: m.sum_sq + v * v,
        })
    }

    pub fn weighted(values: &[f64], weights: &[f64]) -> Self {
        values.iter().zip(weights).fold(Moments::default(), |m, (&v, &w)| Moments {
            n: m.n + w,
            sum: m.sum + w * v,
            sum_sq: m.sum_sq + w * v * v,
        })
    }

    pub fn minus(&self, o: &Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            sum: self.sum - o.sum,
            sum_sq: self.sum_sq - o.sum_sq,
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n
    }

    /// Population variance.
    pub fn var(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n - m * m).max(0.0)
    }

    fn is_finite(&self) -> bool {
        self.n.is_finite() && self.sum.is_finite() && self.sum_sq.is_finite()
    }
}

/// Weighted sums over target rows of the anchor `s` and augmentation `x`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetSums {
    pub w: f64,
    pub s: f64,
    pub x: f64,
    pub ss: f64,
    pub xx: f64,
    pub sx: f64,
}

impl TargetSums {
    pub fn weighted(s: &[f64], x: &[f64], w: Option<&[f64]>) -> Self {
        let mut t = TargetSums::default();
        for i in 0..s.len() {
            let wi = w.map_or(1.0, |w| w[i]);
            t.w += wi;
            t.s += wi * s[i];
            t.x += wi * x[i];
            t.ss += wi * s[i] * s[i];
            t.xx += wi * x[i] * x[i];
            t.sx += wi * s[i] * x[i];
        }
        t
    }

    pub fn minus(&self, o: &TargetSums) -> TargetSums {
        TargetSums {
            w: self.w - o.w,
            s: self.s - o.s,
            x: self.x - o.x,
            ss: self.ss - o.ss,
            xx: self.xx - o.xx,
            sx: self.sx - o.sx,
        }
    }

    /// `sum w d` and `sum w d^2`, `sum w d s` for `d = s - x`.
    fn d(&self) -> f64 {
        self.s - self.x
    }

    fn dd(&self) -> f64 {
        self.ss - 2.0 * self.sx + self.xx
    }

    fn ds(&self) -> f64 {
        self.ss - self.sx
    }

    fn is_finite(&self) -> bool {
        [self.w, self.s, self.x, self.ss, self.xx, self.sx].iter().all(|v| v.is_finite())
    }
}

/// Target sums plus one optional moment record per source site (`k - 1`
/// indexing; `None` marks a site that is empty, dropped or excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSums {
    pub target: TargetSums,
    pub sources: Vec<Option<Moments>>,
}

impl CellSums {
    pub fn total_weight(&self) -> f64 {
        self.target.w + self.sources.iter().flatten().map(|m| m.n).sum::<f64>()
    }

    pub fn minus(&self, o: &CellSums) -> CellSums {
        CellSums {
            target: self.target.minus(&o.target),
            sources: self
                .sources
                .iter()
                .zip(&o.sources)
                .map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => Some(a.minus(b)),
                    (a, _) => *a,
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.target.is_finite() && self.sources.iter().flatten().all(Moments::is_finite)
    }
}

/// Site proportions and site-specific estimates implied by a [`CellSums`].
#[derive(Debug, Clone, PartialEq)]
pub struct Centering {
    pub n: f64,
    pub p0: f64,
    /// `P(R = k)` for sources, 0 for inactive ones.
    pub p: Vec<f64>,
    pub theta0: f64,
    /// `theta^{k,0}`, `NaN` for inactive sources.
    pub theta: Vec<f64>,
    pub active: Vec<bool>,
}

impl Centering {
    pub fn from_sums(c: &CellSums) -> Result<Self> {
        if c.target.w <= 0.0 {
            return Err(Error::EmptyTarget);
        }
        let n = c.total_weight();
        let anchor = c.target.s / c.target.w;
        let active: Vec<bool> = c.sources.iter().map(|m| m.is_some_and(|m| m.n > 0.0)).collect();
        let p = c
            .sources
            .iter()
            .zip(&active)
            .map(|(m, &on)| if on { m.unwrap().n / n } else { 0.0 })
            .collect();
        let theta = c
            .sources
            .iter()
            .zip(&active)
            .map(|(m, &on)| if on { anchor - m.unwrap().mean() } else { f64::NAN })
            .collect();
        Ok(Centering {
            n,
            p0: c.target.w / n,
            p,
            theta0: c.target.d() / c.target.w,
            theta,
            active,
        })
    }

    pub fn active_sources(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&k| self.active[k]).collect()
    }

    /// Squared discrepancies `(theta^{k,0} - theta^0)^2`, 0 for inactive sources.
    pub fn chi_sq(&self) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.active)
            .map(|(t, &on)| if on { (t - self.theta0).powi(2) } else { 0.0 })
            .collect()
    }
}

/// The quadratic `Q(eta) = c - 2 b'eta + eta'G eta + mu'eta` over the active
/// sources, with `mu_k = (lambda / n) chi_k^2` added by the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub c: f64,
    pub b: Vec<f64>,
    /// Row-major `m x m`.
    pub g: Vec<f64>,
    pub chi_sq: Vec<f64>,
    /// Sample size in the `lambda / n` penalty scaling.
    pub n: f64,
    /// Source indices (`k - 1`) of the active coordinates.
    pub sources: Vec<usize>,
}

impl Quadratic {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn g(&self, j: usize, k: usize) -> f64 {
        self.g[j * self.dim() + k]
    }

    /// Objective at source weights `eta` (`eta^0` implicit), penalty included.
    pub fn value(&self, eta: &[f64], lambda: f64) -> f64 {
        let m = self.dim();
        let mut v = self.c;
        for j in 0..m {
            v += -2.0 * self.b[j] * eta[j] + lambda / self.n * self.chi_sq[j] * eta[j];
            for k in 0..m {
                v += eta[j] * self.g(j, k) * eta[k];
            }
        }
        v
    }
}

/// Builds the quadratic from the rows summarized by `rows`, with the EIFs
/// centered by `cent`. Each entry is an average over the total weight of
/// `rows`.
pub fn quadratic(cent: &Centering, rows: &CellSums) -> Result<Quadratic> {
    let t = &rows.target;
    let norm = rows.total_weight();
    if norm <= 0.0 {
        return Err(Error::EmptyTable);
    }
    let sources = cent.active_sources();
    let m = sources.len();
    let p0sq = cent.p0 * cent.p0;
    let th0 = cent.theta0;
    let c = (t.dd() - 2.0 * th0 * t.d() + th0 * th0 * t.w) / p0sq / norm;
    let chi = cent.chi_sq();
    let mut b = Vec::with_capacity(m);
    let mut g = vec![0.0; m * m];
    for (j, &sj) in sources.iter().enumerate() {
        let thj = cent.theta[sj];
        b.push((t.ds() - thj * t.d() - th0 * t.s + th0 * thj * t.w) / p0sq / norm);
        for (k, &sk) in sources.iter().enumerate() {
            let thk = cent.theta[sk];
            let mut v = (t.ss - (thj + thk) * t.s + thj * thk * t.w) / p0sq;
            if j == k {
                let sq = rows.sources[sj].map_or(0.0, |mo| mo.sum_sq);
                v += sq / (cent.p[sj] * cent.p[sj]);
            }
            g[j * m + k] = v / norm;
        }
    }
    Ok(Quadratic {
        c,
        b,
        g,
        chi_sq: sources.iter().map(|&k| chi[k]).collect(),
        n: cent.n,
        sources,
    })
}

/// Mean squared residual `phi*^0 - sum_k eta_k phi*^k` over the rows
/// summarized by `rows`; `eta` holds the weights of every source (`k - 1`).
pub fn residual_score(cent: &Centering, rows: &CellSums, eta: &[f64]) -> f64 {
    let t = &rows.target;
    let norm = rows.total_weight();
    let sigma: f64 = eta.iter().zip(&cent.active).filter(|(_, &on)| on).map(|(e, _)| e).sum();
    let kappa = cent.theta0
        - eta
            .iter()
            .zip(&cent.theta)
            .zip(&cent.active)
            .filter(|(_, &on)| on)
            .map(|((e, th), _)| e * th)
            .sum::<f64>();
    // target rows: (d - sigma s - kappa) / p0
    let target = t.dd() - 2.0 * sigma * t.ds() - 2.0 * kappa * t.d()
        + sigma * sigma * t.ss
        + 2.0 * sigma * kappa * t.s
        + kappa * kappa * t.w;
    let mut total = target / (cent.p0 * cent.p0);
    for (k, m) in rows.sources.iter().enumerate() {
        if let (Some(m), true) = (m, cent.active[k]) {
            total += eta[k] * eta[k] * m.sum_sq / (cent.p[k] * cent.p[k]);
        }
    }
    total / norm
}

/// Plug-in asymptotic variance of the weighted estimator at fixed weights
/// (`eta0` on the target, `eta[k - 1]` on source `k`).
pub fn fed_variance(sums: &CellSums, cent: &Centering, eta: &[f64]) -> f64 {
    let t = &sums.target;
    let sigma: f64 = eta.iter().zip(&cent.active).filter(|(_, &on)| on).map(|(e, _)| e).sum();
    let md = t.d() / t.w;
    let ms = t.s / t.w;
    let var_d = (t.dd() / t.w - md * md).max(0.0);
    let var_s = (t.ss / t.w - ms * ms).max(0.0);
    let cov = t.ds() / t.w - md * ms;
    let mut v = ((1.0 - sigma).powi(2) * var_d + sigma * sigma * var_s + 2.0 * sigma * (1.0 - sigma) * cov) / cent.p0;
    for (k, m) in sums.sources.iter().enumerate() {
        if let (Some(m), true) = (m, cent.active[k]) {
            v += eta[k] * eta[k] * m.var() / cent.p[k];
        }
    }
    v.max(0.0)
}
