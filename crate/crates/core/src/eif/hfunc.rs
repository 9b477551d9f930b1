//! The weighted martingale residual `H` of the survival EIFs.

use crate::error::{Error, Result};
use crate::survival::{CurveKind, Observation, StepCurve};

/// Writes `H(t_j)` for every grid index `j` into `out`.
///
/// `s` and `g` are the outcome and censoring survival curves of the row on
/// the grid, `y_index` the grid index of its observed time. The compensator
/// pairs the discrete hazard `dL_l = 1 - s_l / s_{l-1}` with the post-jump
/// `s_l` and the left limit `g_{l-1}`:
///
/// `H(t_j) = 1{delta, y_index <= j} / (s_y g_{y-1}) - sum_{l <= min(j, y)} dL_l / (s_l g_{l-1})`.
pub fn h_process(y_index: usize, event: bool, s: &[f64], g: &[f64], out: &mut [f64]) {
    h_process_with_hazard(y_index, event, s, g, None, out)
}

/// As [`h_process`], with explicit cumulative-hazard increments `dl[l]`
/// replacing the ones implied by `s` when given.
pub fn h_process_with_hazard(y_index: usize, event: bool, s: &[f64], g: &[f64], dl: Option<&[f64]>, out: &mut [f64]) {
    let l = out.len();
    out[0] = 0.0;
    let mut comp = 0.0;
    let mut jump = 0.0;
    for j in 1..l {
        if j <= y_index {
            let d = match dl {
                Some(d) => d[j],
                None => 1.0 - s[j] / s[j - 1],
            };
            comp += d / (s[j] * g[j - 1]);
            if event && j == y_index {
                jump = 1.0 / (s[j] * g[j - 1]);
            }
        }
        out[j] = jump - comp;
    }
}

/// `H` at time `t` for one observation, given its outcome survival `s`,
/// censoring survival `g` and cumulative hazard `lambda` on a shared grid.
pub fn h_functional(obs: &Observation, s: &StepCurve, g: &StepCurve, lambda: &StepCurve, t: f64, floor: f64) -> Result<f64> {
    let grid = s.grid();
    if g.grid() != grid || lambda.grid() != grid {
        return Err(Error::invalid("H needs curves on one grid"));
    }
    if lambda.kind() != CurveKind::CumHazard {
        return Err(Error::invalid("lambda must be a cumulative hazard"));
    }
    let Some(j) = grid.floor_index(t) else {
        return Ok(0.0);
    };
    let y = grid.interval_index(obs.y);
    let upto = j.min(y);
    for l in 1..=upto.min(grid.len() - 1) {
        if s.values()[l] < floor || g.values()[l - 1] < floor {
            return Err(Error::PositivityViolation {
                obs: 0,
                time: grid.points()[l],
            });
        }
    }
    let lv = lambda.values();
    let dl: Vec<f64> = (0..lv.len()).map(|i| if i == 0 { 0.0 } else { lv[i] - lv[i - 1] }).collect();
    let mut out = vec![0.0; j + 1];
    h_process_with_hazard(y, obs.event(), &s.values()[..=j], &g.values()[..=j], Some(&dl[..=j]), &mut out);
    Ok(out[j])
}

/// Cumulative hazard `sum (1 - s_l / s_{l-1})` implied by a survival curve.
pub fn discrete_cumhaz(s: &StepCurve) -> StepCurve {
    let v = s.values();
    let mut out = Vec::with_capacity(v.len());
    let mut cum = 0.0;
    for i in 0..v.len() {
        if i > 0 && v[i - 1] > 0.0 {
            cum += 1.0 - v[i] / v[i - 1];
        }
        out.push(cum);
    }
    StepCurve::new(s.grid().clone(), out, CurveKind::CumHazard).expect("grid-aligned values")
}
