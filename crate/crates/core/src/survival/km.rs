//! Kaplan–Meier, Nelson–Aalen and the discrete product integral.

use std::sync::Arc;

use super::grid::{CurveKind, StepCurve, TimeGrid};
use crate::error::{Error, Result};

/// Weighted event count and risk-set size at one distinct event time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RiskPoint {
    pub time: f64,
    pub events: f64,
    pub at_risk: f64,
}

/// Distinct event times in increasing order with weighted `d_j` and `n_j`.
pub(crate) fn risk_table(data: &[(f64, bool)], weights: Option<&[f64]>) -> Result<Vec<RiskPoint>> {
    if data.is_empty() {
        return Err(Error::invalid("survival data is empty"));
    }
    if let Some(w) = weights {
        if w.len() != data.len() {
            return Err(Error::invalid("weights and data differ in length"));
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("weights are all zero"));
        }
    }
    if data.iter().any(|(y, _)| !(*y >= 0.0 && y.is_finite())) {
        return Err(Error::invalid("observed times must be finite and nonnegative"));
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&i, &j| data[i].0.total_cmp(&data[j].0));

    let mut remaining: f64 = (0..data.len()).map(weight).sum();
    let mut table = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let time = data[order[k]].0;
        let mut events = 0.0;
        let mut leaving = 0.0;
        while k < order.len() && data[order[k]].0 == time {
            let i = order[k];
            let w = weight(i);
            if data[i].1 {
                events += w;
            }
            leaving += w;
            k += 1;
        }
        if events > 0.0 {
            table.push(RiskPoint {
                time,
                events,
                at_risk: remaining,
            });
        }
        remaining -= leaving;
    }
    Ok(table)
}

/// Evaluates a step function defined by `(time, value)` breakpoints on the
/// grid. Index 0 keeps `initial`: anything recorded at time 0 counts as `0+`.
fn on_grid(grid: &TimeGrid, steps: &[(f64, f64)], initial: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut s = 0;
    let mut current = initial;
    for (j, &t) in grid.points().iter().enumerate() {
        while s < steps.len() && steps[s].0 <= t {
            current = steps[s].1;
            s += 1;
        }
        out.push(if j == 0 { initial } else { current });
    }
    out
}

/// Kaplan–Meier survival curve on `grid`; `weights` scale each subject's
/// contribution to both the event count and the risk set.
pub fn km_fit(data: &[(f64, bool)], weights: Option<&[f64]>, grid: &Arc<TimeGrid>) -> Result<StepCurve> {
    let table = risk_table(data, weights)?;
    let mut s = 1.0;
    let steps: Vec<(f64, f64)> = table
        .iter()
        .map(|p| {
            s *= 1.0 - p.events / p.at_risk;
            (p.time, s.max(0.0))
        })
        .collect();
    Ok(StepCurve::from_parts(
        grid.clone(),
        on_grid(grid, &steps, 1.0),
        CurveKind::Survival,
    ))
}

/// Nelson–Aalen cumulative hazard `sum_{t_j <= t} d_j / n_j` on `grid`.
pub fn nelson_aalen_fit(data: &[(f64, bool)], weights: Option<&[f64]>, grid: &Arc<TimeGrid>) -> Result<StepCurve> {
    let table = risk_table(data, weights)?;
    let mut cum = 0.0;
    let steps: Vec<(f64, f64)> = table
        .iter()
        .map(|p| {
            cum += p.events / p.at_risk;
            (p.time, cum)
        })
        .collect();
    Ok(StepCurve::from_parts(
        grid.clone(),
        on_grid(grid, &steps, 0.0),
        CurveKind::CumHazard,
    ))
}

/// Discrete product integral `S(t_j) = prod_{i <= j} (1 - dLambda(t_i))`.
pub fn product_integral(lambda: &StepCurve) -> Result<StepCurve> {
    if lambda.kind() != CurveKind::CumHazard {
        return Err(Error::invalid("product integral expects a cumulative hazard"));
    }
    let values = lambda.values();
    let mut out = Vec::with_capacity(values.len());
    let mut s = 1.0;
    let mut prev = 0.0;
    for (j, &v) in values.iter().enumerate() {
        let jump = v - prev;
        if jump < 0.0 {
            return Err(Error::invalid(format!("cumulative hazard decreases at grid index {j}")));
        }
        // A jump of exactly 1 recovered as a difference of cumulative sums
        // can land a few ulps above 1.
        let slack = 4.0 * f64::EPSILON * v.abs().max(1.0);
        if jump > 1.0 + slack {
            return Err(Error::InvalidHazard { index: j, jump });
        }
        s *= 1.0 - jump.min(1.0);
        out.push(s);
        prev = v;
    }
    Ok(StepCurve::from_parts(lambda.grid().clone(), out, CurveKind::Survival))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid3() -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(3.0, 1.0).unwrap())
    }

    #[test]
    fn unit_jump_after_accumulated_hazard() {
        // cumulative 1/3 + 1/2 + 1 is not exact; the last jump rounds above 1
        let data = [(1.0, true), (1.0, false), (1.0, false), (2.0, true), (2.0, false), (3.0, true)];
        let na = nelson_aalen_fit(&data, None, &grid3()).unwrap();
        let s = product_integral(&na).unwrap();
        assert_eq!(s.values()[3], 0.0);
        let km = km_fit(&data, None, &grid3()).unwrap();
        for (a, b) in s.values().iter().zip(km.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn km_hand_example() {
        let data = [(1.0, true), (2.0, false), (3.0, true)];
        let s = km_fit(&data, None, &grid3()).unwrap();
        assert_eq!(s.values()[0], 1.0);
        assert!((s.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.eval(3.0), 0.0);
    }

    #[test]
    fn km_edge_cases() {
        let g = Arc::new(TimeGrid::uniform(10.0, 1.0).unwrap());
        let s = km_fit(&[(5.0, false), (7.0, false)], None, &g).unwrap();
        assert!(s.values().iter().all(|v| *v == 1.0));
        let s = km_fit(&[(1.0, true)], None, &g).unwrap();
        assert_eq!(s.eval(0.5), 1.0);
        assert_eq!(s.eval(1.0), 0.0);
        assert_eq!(s.eval(8.0), 0.0);
        assert!(km_fit(&[], None, &g).is_err());
        // events at time zero drop the curve at 0+
        let s = km_fit(&[(0.0, true), (0.0, true)], None, &g).unwrap();
        assert_eq!(s.values()[0], 1.0);
        assert_eq!(s.values()[1], 0.0);
        assert!(km_fit(&[(1.0, true)], Some(&[0.0]), &g).is_err());
    }

    #[test]
    fn nelson_aalen_examples() {
        let data = [(1.0, true), (2.0, false), (3.0, true)];
        let l = nelson_aalen_fit(&data, None, &grid3()).unwrap();
        assert_eq!(l.values()[0], 0.0);
        assert!((l.eval(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((l.eval(3.0) - 4.0 / 3.0).abs() < 1e-15);
        let l = nelson_aalen_fit(&[(1.0, false), (2.0, false)], None, &grid3()).unwrap();
        assert!(l.values().iter().all(|v| *v == 0.0));
        let l = nelson_aalen_fit(&[(1.0, true), (1.0, true)], None, &grid3()).unwrap();
        assert_eq!(l.eval(1.0), 1.0);
    }

    #[test]
    fn product_integral_examples() {
        let g = grid3();
        let l = StepCurve::new(g.clone(), vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], CurveKind::CumHazard).unwrap();
        let s = product_integral(&l).unwrap();
        assert!((s.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        let zero = StepCurve::constant(g.clone(), 0.0, CurveKind::CumHazard);
        assert!(product_integral(&zero).unwrap().values().iter().all(|v| *v == 1.0));
        let data = [(1.0, true), (2.0, false), (3.0, true)];
        let pi = product_integral(&nelson_aalen_fit(&data, None, &g).unwrap()).unwrap();
        let km = km_fit(&data, None, &g).unwrap();
        for (a, b) in pi.values().iter().zip(km.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let bad = StepCurve::new(g, vec![0.0, 0.5, 1.6, 1.6], CurveKind::CumHazard).unwrap();
        assert!(matches!(product_integral(&bad), Err(Error::InvalidHazard { index: 2, .. })));
    }

    proptest! {
        #[test]
        fn km_weight_scale_invariance(
            raw in prop::collection::vec((1u32..20, any::<bool>()), 1..40),
            c in 0.01f64..100.0,
        ) {
            let g = Arc::new(TimeGrid::uniform(20.0, 1.0).unwrap());
            let data: Vec<(f64, bool)> = raw.iter().map(|(t, d)| (*t as f64, *d)).collect();
            let w = vec![c; data.len()];
            let a = km_fit(&data, None, &g).unwrap();
            let b = km_fit(&data, Some(&w), &g).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!(a.is_valid());
        }
    }
}
