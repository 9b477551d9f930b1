use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing evaluation times `0 = t_0 < t_1 < ... < t_J = tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    /// `{0, step, 2 step, ..., tau}`. `tau` must be a whole number of steps.
    pub fn uniform(tau: f64, step: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {tau}")));
        }
        if !(step > 0.0 && step <= tau) {
            return Err(Error::invalid(format!("step must lie in (0, tau], got {step}")));
        }
        let ratio = tau / step;
        let m = ratio.round();
        if (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(format!("tau {tau} is not a multiple of step {step}")));
        }
        let m = m as usize;
        let mut points: Vec<f64> = (0..=m).map(|j| j as f64 * step).collect();
        points[m] = tau;
        Ok(TimeGrid { points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a time grid needs at least two points"));
        }
        if points[0] != 0.0 {
            return Err(Error::invalid("time grid must start at 0"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("time grid points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        Ok(TimeGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Largest index `j` with `t_j <= t`; `None` for negative `t`.
    pub fn floor_index(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t.is_nan() {
            return None;
        }
        Some(self.points.partition_point(|&p| p <= t) - 1)
    }

    /// Index of a grid point equal to `t` (within 1e-9 relative).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = self.floor_index(t + 1e-9 * t.abs().max(1.0))?;
        let p = self.points[j];
        ((p - t).abs() <= 1e-9 * t.abs().max(1.0)).then_some(j)
    }

    /// Grid interval containing an observed time: the smallest `j >= 1`
    /// with `t_j >= y`. Times past the horizon map to `len()`.
    ///
    /// A jump stored at `t_j` aggregates everything in `(t_{j-1}, t_j]`, so
    /// an observation at `y` is at risk for every jump up to and including
    /// this index. Time 0 is treated as `0+`.
    pub fn interval_index(&self, y: f64) -> usize {
        let j = self.points.partition_point(|&p| p < y);
        j.max(1)
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        TimeGrid::from_points(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    Survival,
    CumHazard,
}

/// A right-continuous step function stored on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    kind: CurveKind,
}

impl StepCurve {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>, kind: CurveKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "curve has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("curve values must not be NaN"));
        }
        Ok(StepCurve { grid, values, kind })
    }

    pub(crate) fn from_parts(grid: Arc<TimeGrid>, values: Vec<f64>, kind: CurveKind) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        StepCurve { grid, values, kind }
    }

    pub fn constant(grid: Arc<TimeGrid>, value: f64, kind: CurveKind) -> Self {
        let values = vec![value; grid.len()];
        StepCurve { grid, values, kind }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    /// Right-continuous evaluation. Before 0 a survival curve is 1 and a
    /// cumulative hazard 0; past `tau` the last value is carried forward.
    pub fn eval(&self, t: f64) -> f64 {
        match self.grid.floor_index(t) {
            Some(j) => self.values[j],
            None => match self.kind {
                CurveKind::Survival => 1.0,
                CurveKind::CumHazard => 0.0,
            },
        }
    }

    /// Checks the shape invariants of the curve kind.
    pub fn is_valid(&self) -> bool {
        match self.kind {
            CurveKind::Survival => {
                self.values.iter().all(|v| (0.0..=1.0).contains(v))
                    && self.values.windows(2).all(|w| w[1] <= w[0])
            }
            CurveKind::CumHazard => {
                self.values.iter().all(|v| *v >= 0.0) && self.values.windows(2).all(|w| w[1] >= w[0])
            }
        }
    }
}
