//! Discrete super learner over a small library of survival models.

use std::borrow::Borrow;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::survival::{cox_fit, km_fit, CoxModel, CurveKind, Observation, Outcome, StepCurve, TimeGrid};

/// Library members of the survival ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    MarginalKm,
    StratifiedKm,
    Cox,
}

pub const ALL_CANDIDATES: [Candidate; 3] = [Candidate::MarginalKm, Candidate::StratifiedKm, Candidate::Cox];

/// A fitted survival model for either the event or the censoring time.
#[derive(Debug, Clone, PartialEq)]
pub enum SurvivalModel {
    MarginalKm(StepCurve),
    /// Curves for `a = 0` and `a = 1`.
    StratifiedKm([StepCurve; 2]),
    Cox(CoxModel),
}

/// Wire form of a [`SurvivalModel`]; curves are `(time, value)` pairs on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum ModelParams {
    MarginalKm {
        survival: Vec<(f64, f64)>,
    },
    StratifiedKm {
        arm0: Vec<(f64, f64)>,
        arm1: Vec<(f64, f64)>,
    },
    Cox {
        outcome: Outcome,
        beta: Vec<f64>,
        center: Vec<f64>,
        baseline_cumhaz: Vec<(f64, f64)>,
    },
}

fn pairs(c: &StepCurve) -> Vec<(f64, f64)> {
    c.grid().points().iter().copied().zip(c.values().iter().copied()).collect()
}

fn curve_from_pairs(p: &[(f64, f64)], grid: &Arc<TimeGrid>, kind: CurveKind) -> Result<StepCurve> {
    if p.len() != grid.len() || p.iter().zip(grid.points()).any(|((t, _), g)| t != g) {
        return Err(Error::Protocol("model curve does not match the time grid".into()));
    }
    StepCurve::new(grid.clone(), p.iter().map(|(_, v)| *v).collect(), kind)
}

impl SurvivalModel {
    pub fn candidate(&self) -> Candidate {
        match self {
            SurvivalModel::MarginalKm(_) => Candidate::MarginalKm,
            SurvivalModel::StratifiedKm(_) => Candidate::StratifiedKm,
            SurvivalModel::Cox(_) => Candidate::Cox,
        }
    }

    /// Writes `S(t | a, x)` at every grid point into `out`.
    pub fn survival_into(&self, x: &[f64], a: u8, out: &mut [f64]) -> Result<()> {
        match self {
            SurvivalModel::MarginalKm(c) => out.copy_from_slice(c.values()),
            SurvivalModel::StratifiedKm(c) => out.copy_from_slice(c[a as usize].values()),
            SurvivalModel::Cox(m) => m.survival_into(x, a, out)?,
        }
        Ok(())
    }

    pub fn to_params(&self) -> ModelParams {
        match self {
            SurvivalModel::MarginalKm(c) => ModelParams::MarginalKm { survival: pairs(c) },
            SurvivalModel::StratifiedKm([c0, c1]) => ModelParams::StratifiedKm {
                arm0: pairs(c0),
                arm1: pairs(c1),
            },
            SurvivalModel::Cox(m) => ModelParams::Cox {
                outcome: m.outcome,
                beta: m.beta.clone(),
                center: m.center.clone(),
                baseline_cumhaz: pairs(&m.baseline_cumhaz),
            },
        }
    }

    pub fn from_params(p: &ModelParams, grid: &Arc<TimeGrid>) -> Result<Self> {
        Ok(match p {
            ModelParams::MarginalKm { survival } => {
                SurvivalModel::MarginalKm(curve_from_pairs(survival, grid, CurveKind::Survival)?)
            }
            ModelParams::StratifiedKm { arm0, arm1 } => SurvivalModel::StratifiedKm([
                curve_from_pairs(arm0, grid, CurveKind::Survival)?,
                curve_from_pairs(arm1, grid, CurveKind::Survival)?,
            ]),
            ModelParams::Cox {
                outcome,
                beta,
                center,
                baseline_cumhaz,
            } => {
                if beta.len() != center.len() || beta.is_empty() {
                    return Err(Error::Protocol("cox parameters have inconsistent lengths".into()));
                }
                SurvivalModel::Cox(CoxModel {
                    beta: beta.clone(),
                    center: center.clone(),
                    baseline_cumhaz: curve_from_pairs(baseline_cumhaz, grid, CurveKind::CumHazard)?,
                    outcome: *outcome,
                    iterations: 0,
                })
            }
        })
    }
}

/// The selected model together with its cross-validated scores.
#[derive(Debug, Clone)]
pub struct EnsembleFit {
    pub model: SurvivalModel,
    /// Cross-validated integrated Brier score per candidate; infinite when the
    /// candidate could not be fitted.
    pub cv_scores: Vec<(Candidate, f64)>,
    /// No outcome events: the marginal KM fallback was returned.
    pub degenerate: bool,
}

fn fit_candidate<O: Borrow<Observation>>(
    c: Candidate,
    train: &[O],
    outcome: Outcome,
    grid: &Arc<TimeGrid>,
) -> Result<SurvivalModel> {
    let pairs: Vec<(f64, bool)> = train.iter().map(|o| o.borrow().outcome(outcome)).collect();
    match c {
        Candidate::MarginalKm => Ok(SurvivalModel::MarginalKm(km_fit(&pairs, None, grid)?)),
        Candidate::StratifiedKm => {
            let marginal = km_fit(&pairs, None, grid)?;
            let mut arms: [StepCurve; 2] = [marginal.clone(), marginal];
            for a in 0..2u8 {
                let sub: Vec<(f64, bool)> = train
                    .iter()
                    .zip(&pairs)
                    .filter(|(o, _)| Borrow::<Observation>::borrow(*o).a == a)
                    .map(|(_, p)| *p)
                    .collect();
                if !sub.is_empty() {
                    arms[a as usize] = km_fit(&sub, None, grid)?;
                }
            }
            Ok(SurvivalModel::StratifiedKm(arms))
        }
        Candidate::Cox => Ok(SurvivalModel::Cox(cox_fit(train, outcome, grid)?)),
    }
}

/// IPCW integrated Brier score of `model` on held-out rows. `weight_curve`
/// is the survival curve of the complementary (censoring) time.
fn brier_score(model: &SurvivalModel, held_out: &[&Observation], outcome: Outcome, weight_curve: &StepCurve) -> Result<f64> {
    let grid = weight_curve.grid();
    let g = weight_curve.values();
    let points: Vec<usize> = (1..grid.len()).filter(|&j| g[j] >= 0.05).collect();
    if points.is_empty() || held_out.is_empty() {
        return Ok(0.0);
    }
    let mut pred = vec![0.0; grid.len()];
    let mut total = 0.0;
    for o in held_out {
        model.survival_into(&o.x, o.a, &mut pred)?;
        let (y, d) = o.outcome(outcome);
        let idx = grid.interval_index(y);
        for &j in &points {
            if idx <= j {
                if d {
                    total += pred[j] * pred[j] / g[idx - 1].max(0.05);
                }
            } else {
                total += (1.0 - pred[j]).powi(2) / g[j];
            }
        }
    }
    Ok(total / (held_out.len() * points.len()) as f64)
}

/// Selects among `candidates` by `v`-fold cross-validated integrated Brier
/// score, then refits the winner on all of `train`.
pub fn fit_survival_ensemble<O: Borrow<Observation>>(
    train: &[O],
    outcome: Outcome,
    grid: &Arc<TimeGrid>,
    candidates: &[Candidate],
    v: usize,
    seed: &SeedStream,
) -> Result<EnsembleFit> {
    if train.is_empty() {
        return Err(Error::invalid("survival ensemble needs training data"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("survival ensemble needs at least one candidate"));
    }
    let rows: Vec<&Observation> = train.iter().map(|o| o.borrow()).collect();
    let has_events = rows.iter().any(|o| o.outcome(outcome).1);
    if !has_events {
        let pairs: Vec<(f64, bool)> = rows.iter().map(|o| o.outcome(outcome)).collect();
        return Ok(EnsembleFit {
            model: SurvivalModel::MarginalKm(km_fit(&pairs, None, grid)?),
            cv_scores: candidates.iter().map(|c| (*c, f64::INFINITY)).collect(),
            degenerate: true,
        });
    }

    let mut scores: Vec<(Candidate, f64)> = candidates.iter().map(|c| (*c, 0.0)).collect();
    if candidates.len() > 1 {
        let v = v.clamp(2, rows.len().max(2));
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        perm.shuffle(&mut seed.child("ensemble-cv").rng());
        let complement = match outcome {
            Outcome::Event => Outcome::Censoring,
            Outcome::Censoring => Outcome::Event,
        };
        let pairs: Vec<(f64, bool)> = rows.iter().map(|o| o.outcome(complement)).collect();
        let weight_curve = km_fit(&pairs, None, grid)?;
        for f in 0..v {
            let held: Vec<&Observation> = perm.iter().skip(f).step_by(v).map(|&i| rows[i]).collect();
            let fit_rows: Vec<&Observation> = perm
                .iter()
                .enumerate()
                .filter(|(p, _)| p % v != f)
                .map(|(_, &i)| rows[i])
                .collect();
            for (c, score) in scores.iter_mut() {
                if !score.is_finite() {
                    continue;
                }
                match fit_candidate(*c, &fit_rows, outcome, grid) {
                    Ok(m) => *score += brier_score(&m, &held, outcome, &weight_curve)? / v as f64,
                    Err(_) => *score = f64::INFINITY,
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].1.total_cmp(&scores[j].1));
    for &i in &order {
        if !scores[i].1.is_finite() {
            break;
        }
        if let Ok(model) = fit_candidate(scores[i].0, &rows, outcome, grid) {
            return Ok(EnsembleFit {
                model,
                cv_scores: scores,
                degenerate: false,
            });
        }
    }
    let pairs: Vec<(f64, bool)> = rows.iter().map(|o| o.outcome(outcome)).collect();
    Ok(EnsembleFit {
        model: SurvivalModel::MarginalKm(km_fit(&pairs, None, grid)?),
        cv_scores: scores,
        degenerate: true,
    })
}
