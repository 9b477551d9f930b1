use super::grid::{CurveKind, StepCurve};

/// Least-squares non-increasing fit by pool-adjacent-violators.
pub fn pava_decreasing(values: &[f64]) -> Vec<f64> {
    // blocks of (mean, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Projects a survival curve onto non-increasing sequences, then clamps
/// into `[0, 1]`.
pub fn isotonic_correct(curve: &StepCurve) -> StepCurve {
    let values = pava_decreasing(curve.values())
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    StepCurve::from_parts(curve.grid().clone(), values, CurveKind::Survival)
}
