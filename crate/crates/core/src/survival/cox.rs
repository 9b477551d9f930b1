//! Cox proportional hazards regression with Breslow ties and baseline.

use std::borrow::Borrow;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::data::{Observation, Outcome};
use super::grid::{CurveKind, StepCurve, TimeGrid};
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
/// |beta_j| * sd_j beyond this means the likelihood has no finite maximum.
const DIVERGENCE_SCALE: f64 = 40.0;

/// A fitted Cox model on features `[x_1, .., x_d, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxModel {
    /// Coefficients for `[x, a]`; length `d + 1`.
    pub beta: Vec<f64>,
    /// Feature means subtracted before forming the linear predictor.
    pub center: Vec<f64>,
    /// Breslow cumulative baseline hazard at the centered covariates.
    pub baseline_cumhaz: StepCurve,
    pub outcome: Outcome,
    pub iterations: usize,
}

fn features(o: &Observation) -> Vec<f64> {
    let mut z = o.x.clone();
    z.push(o.a as f64);
    z
}

struct Design {
    times: Vec<f64>,
    events: Vec<bool>,
    z: Vec<Vec<f64>>,
    /// Indices sorted by decreasing time.
    order: Vec<usize>,
}

impl Design {
    fn new<O: Borrow<Observation>>(data: &[O], outcome: Outcome, center: Option<&[f64]>) -> Self {
        let mut times = Vec::with_capacity(data.len());
        let mut events = Vec::with_capacity(data.len());
        let mut z = Vec::with_capacity(data.len());
        for o in data {
            let o = o.borrow();
            let (y, d) = o.outcome(outcome);
            times.push(y);
            events.push(d);
            let mut f = features(o);
            if let Some(c) = center {
                for (v, m) in f.iter_mut().zip(c) {
                    *v -= m;
                }
            }
            z.push(f);
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&i, &j| times[j].total_cmp(&times[i]));
        Design { times, events, z, order }
    }

    fn dim(&self) -> usize {
        self.z.first().map_or(0, |z| z.len())
    }

    /// Log partial likelihood, gradient and observed information over the
    /// `active` coordinates (others held at their value in `beta`).
    fn evaluate(&self, beta: &[f64], active: &[usize], want_derivs: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = active.len();
        let mut ll = 0.0;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let n = self.order.len();
        let mut k = 0;
        while k < n {
            let time = self.times[self.order[k]];
            let start = k;
            while k < n && self.times[self.order[k]] == time {
                let i = self.order[k];
                let zi = &self.z[i];
                let w = dot(beta, zi).exp();
                s0 += w;
                if want_derivs {
                    for (r, &jr) in active.iter().enumerate() {
                        s1[r] += w * zi[jr];
                        for (c, &jc) in active.iter().enumerate().take(r + 1) {
                            s2[r * p + c] += w * zi[jr] * zi[jc];
                        }
                    }
                }
                k += 1;
            }
            for &i in &self.order[start..k] {
                if !self.events[i] {
                    continue;
                }
                let zi = &self.z[i];
                ll += dot(beta, zi) - s0.ln();
                if want_derivs {
                    for r in 0..p {
                        let m = s1[r] / s0;
                        grad[r] += zi[active[r]] - m;
                        for c in 0..=r {
                            let v = s2[r * p + c] / s0 - m * s1[c] / s0;
                            info[(r, c)] += v;
                        }
                    }
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                info[(c, r)] = info[(r, c)];
            }
        }
        (ll, grad, info)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Breslow log partial likelihood at `beta` (features `[x, a]`, uncentered).
pub fn cox_partial_loglik<O: Borrow<Observation>>(data: &[O], outcome: Outcome, beta: &[f64]) -> Result<f64> {
    let design = Design::new(data, outcome, None);
    if design.dim() != beta.len() {
        return Err(Error::invalid(format!(
            "beta has length {}, expected {}",
            beta.len(),
            design.dim()
        )));
    }
    Ok(design.evaluate(beta, &[], false).0)
}

/// Fits a Cox model for the chosen outcome by damped Newton iterations.
pub fn cox_fit<O: Borrow<Observation>>(data: &[O], outcome: Outcome, grid: &Arc<TimeGrid>) -> Result<CoxModel> {
    if data.is_empty() {
        return Err(Error::invalid("cox_fit needs at least one observation"));
    }
    let n = data.len() as f64;
    let p = data[0].borrow().x.len() + 1;
    let mut center = vec![0.0; p];
    for o in data {
        for (c, v) in center.iter_mut().zip(features(o.borrow())) {
            *c += v / n;
        }
    }
    let design = Design::new(data, outcome, Some(&center));
    if design.z.iter().any(|z| z.len() != p) {
        return Err(Error::invalid("observations differ in covariate dimension"));
    }
    let mut event_times: Vec<f64> = (0..design.times.len())
        .filter(|&i| design.events[i])
        .map(|i| design.times[i])
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "{} distinct {:?} times, need at least 2",
            event_times.len(),
            outcome
        )));
    }

    let sd: Vec<f64> = (0..p)
        .map(|j| (design.z.iter().map(|z| z[j] * z[j]).sum::<f64>() / n).sqrt())
        .collect();
    let active: Vec<usize> = (0..p).filter(|&j| sd[j] > 1e-12 * (1.0 + center[j].abs())).collect();
    check_rank(&design, &active, &sd)?;

    let mut beta = vec![0.0; p];
    let (mut ll, mut grad, mut info) = design.evaluate(&beta, &active, true);
    let mut iterations = 0;
    while grad.amax() >= GRAD_TOL {
        if iterations == MAX_ITER {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: grad.amax(),
                last_iterate: beta,
            });
        }
        iterations += 1;
        let step = newton_step(&info, &grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = beta.clone();
            for (r, &j) in active.iter().enumerate() {
                trial[j] += scale * step[r];
            }
            let (ll_new, g_new, i_new) = design.evaluate(&trial, &active, true);
            if ll_new.is_finite() && ll_new >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = trial;
                ll = ll_new;
                grad = g_new;
                info = i_new;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if active.iter().any(|&j| beta[j].abs() * sd[j] > DIVERGENCE_SCALE) {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: grad.amax(),
                last_iterate: beta,
            });
        }
        if !accepted {
            // Line search stalled at the limit of floating-point resolution.
            if grad.amax() < 1e-6 * (1.0 + n) {
                break;
            }
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: grad.amax(),
                last_iterate: beta,
            });
        }
    }

    // A flat likelihood far from the origin signals a monotone likelihood
    // (separation) that merely crept under the gradient tolerance.
    let far = active.iter().any(|&j| beta[j].abs() * sd[j] > 5.0);
    if far && !active.is_empty() {
        let mut scaled = info.clone();
        for r in 0..active.len() {
            for c in 0..active.len() {
                scaled[(r, c)] *= sd[active[r]] * sd[active[c]];
            }
        }
        let n_events = design.events.iter().filter(|e| **e).count() as f64;
        if scaled.symmetric_eigenvalues().min() < 1e-6 * n_events {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: grad.amax(),
                last_iterate: beta,
            });
        }
    }

    let baseline = breslow_baseline(&design, &beta, grid);
    Ok(CoxModel {
        beta,
        center,
        baseline_cumhaz: baseline,
        outcome,
        iterations,
    })
}

fn check_rank(design: &Design, active: &[usize], sd: &[f64]) -> Result<()> {
    let p = active.len();
    if p == 0 {
        return Ok(());
    }
    let n = design.z.len() as f64;
    let mut corr = DMatrix::<f64>::zeros(p, p);
    for z in &design.z {
        for r in 0..p {
            for c in 0..p {
                corr[(r, c)] += z[active[r]] * z[active[c]] / (n * sd[active[r]] * sd[active[c]]);
            }
        }
    }
    let eig = corr.symmetric_eigenvalues();
    if eig.min() < 1e-10 * eig.max().max(1.0) {
        return Err(Error::SingularDesign);
    }
    Ok(())
}

fn newton_step(info: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = info.clone().cholesky() {
        return ch.solve(grad);
    }
    let ridge = 1e-8 * info.diagonal().amax().max(1.0);
    let mut m = info.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += ridge;
    }
    match m.cholesky() {
        Some(ch) => ch.solve(grad),
        None => grad.clone(),
    }
}

fn breslow_baseline(design: &Design, beta: &[f64], grid: &Arc<TimeGrid>) -> StepCurve {
    let n = design.order.len();
    let mut jumps: Vec<(f64, f64)> = Vec::new();
    let mut s0 = 0.0;
    let mut k = 0;
    while k < n {
        let time = design.times[design.order[k]];
        let mut d = 0.0;
        while k < n && design.times[design.order[k]] == time {
            let i = design.order[k];
            s0 += dot(beta, &design.z[i]).exp();
            if design.events[i] {
                d += 1.0;
            }
            k += 1;
        }
        if d > 0.0 {
            jumps.push((time, d / s0));
        }
    }
    jumps.reverse();
    let mut values = Vec::with_capacity(grid.len());
    let mut cum = 0.0;
    let mut s = 0;
    for (j, &t) in grid.points().iter().enumerate() {
        while s < jumps.len() && jumps[s].0 <= t {
            cum += jumps[s].1;
            s += 1;
        }
        values.push(if j == 0 { 0.0 } else { cum });
    }
    StepCurve::from_parts(grid.clone(), values, CurveKind::CumHazard)
}

impl CoxModel {
    pub fn dim(&self) -> usize {
        self.beta.len() - 1
    }

    /// `beta' ([x, a] - center)`.
    pub fn linear_predictor(&self, x: &[f64], a: u8) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "covariate vector has length {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let mut lp = 0.0;
        for j in 0..x.len() {
            lp += self.beta[j] * (x[j] - self.center[j]);
        }
        lp += self.beta[x.len()] * (a as f64 - self.center[x.len()]);
        Ok(lp)
    }

    /// Writes `exp(-Lambda0(t) exp(lp))` for every grid point into `out`.
    pub fn survival_into(&self, x: &[f64], a: u8, out: &mut [f64]) -> Result<()> {
        let risk = self.linear_predictor(x, a)?.exp();
        for (o, l) in out.iter_mut().zip(self.baseline_cumhaz.values()) {
            *o = (-l * risk).exp();
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.baseline_cumhaz.grid()
    }
}

/// Conditional survival `S(t | a, x)` on the model's grid.
pub fn predict_conditional_survival(model: &CoxModel, x: &[f64], a: u8) -> Result<StepCurve> {
    let mut values = vec![0.0; model.grid().len()];
    model.survival_into(x, a, &mut values)?;
    Ok(StepCurve::from_parts(model.grid().clone(), values, CurveKind::Survival))
}
