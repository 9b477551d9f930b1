//! Monte Carlo replication and the summary metrics of the simulation study.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::competitors::{run_competitors, CompetitorConfig, Method};
use super::dgp::gen_dataset;
use super::scenario::ScenarioSpec;
use super::truth::{truth_oracle, TruthCurve};
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::survival::TimeGrid;

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub reps: usize,
    pub eval_times: Vec<f64>,
    pub n_super: usize,
    pub competitors: CompetitorConfig,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            reps: 200,
            eval_times: vec![30.0, 60.0, 90.0],
            n_super: 1_000_000,
            competitors: CompetitorConfig::default(),
        }
    }
}

/// One method's estimate in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub method: Method,
    pub t: f64,
    pub a: u8,
    pub rep: usize,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub truth: f64,
}

/// Aggregates for one `(method, t, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub t: f64,
    pub a: u8,
    pub reps: usize,
    pub truth: f64,
    pub truth_se: f64,
    pub mean_bias: f64,
    pub rmse: f64,
    /// RMSE relative to the target-only estimator.
    pub rrmse: f64,
    pub mean_ci_width: f64,
    /// Coverage in percent.
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub spec: ScenarioSpec,
    pub records: Vec<Record>,
    pub summary: Vec<Summary>,
    pub failed_reps: Vec<(usize, String)>,
    /// Per-method failures inside otherwise successful replicates.
    pub method_failures: Vec<(usize, Method, String)>,
    /// Replicates never started because the run was stopped early.
    pub skipped_reps: usize,
}

impl MetricsReport {
    pub fn get(&self, method: Method, t: f64, a: u8) -> Option<&Summary> {
        self.summary.iter().find(|s| s.method == method && s.t == t && s.a == a)
    }

    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "t", "a", "rep", "estimate", "se", "ci_lo", "ci_hi", "truth"])?;
        for r in &self.records {
            w.write_record([
                r.method.name().to_string(),
                r.t.to_string(),
                r.a.to_string(),
                r.rep.to_string(),
                r.estimate.to_string(),
                r.se.to_string(),
                r.ci_lo.to_string(),
                r.ci_hi.to_string(),
                r.truth.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario", "n_source", "method", "t", "a", "reps", "truth", "truth_se", "mean_bias", "rmse", "rrmse",
            "mean_ci_width", "cp",
        ])?;
        for s in &self.summary {
            w.write_record([
                self.spec.scenario.name().to_string(),
                self.spec.n_source.to_string(),
                s.method.name().to_string(),
                s.t.to_string(),
                s.a.to_string(),
                s.reps.to_string(),
                s.truth.to_string(),
                s.truth_se.to_string(),
                s.mean_bias.to_string(),
                s.rmse.to_string(),
                s.rrmse.to_string(),
                s.mean_ci_width.to_string(),
                s.cp.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Summaries from raw records; RRMSE is relative to TGT at the same `(t, a)`.
pub fn summarize(records: &[Record], truths: &[TruthCurve; 2]) -> Vec<Summary> {
    let mut groups: BTreeMap<(Method, u64, u8), Vec<&Record>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.t.to_bits(), r.a)).or_default().push(r);
    }
    let rmse_of = |rs: &[&Record]| (rs.iter().map(|r| (r.estimate - r.truth).powi(2)).sum::<f64>() / rs.len() as f64).sqrt();
    let mut out: Vec<Summary> = groups
        .iter()
        .map(|((m, tb, a), rs)| {
            let t = f64::from_bits(*tb);
            let n = rs.len() as f64;
            let tgt = groups.get(&(Method::Tgt, *tb, *a)).map(|g| rmse_of(g));
            let rmse = rmse_of(rs);
            let truth = truths[*a as usize].at(t).unwrap_or(rs[0].truth);
            let j = truths[*a as usize].grid.iter().position(|&g| g == t);
            Summary {
                method: *m,
                t,
                a: *a,
                reps: rs.len(),
                truth,
                truth_se: j.map_or(f64::NAN, |j| truths[*a as usize].se[j]),
                mean_bias: rs.iter().map(|r| r.estimate - r.truth).sum::<f64>() / n,
                rmse,
                rrmse: match tgt {
                    _ if *m == Method::Tgt => 1.0,
                    Some(t) => rmse / t,
                    None => f64::NAN,
                },
                mean_ci_width: rs.iter().map(|r| r.ci_hi - r.ci_lo).sum::<f64>() / n,
                cp: 100.0 * rs.iter().filter(|r| r.ci_lo <= r.truth && r.truth <= r.ci_hi).count() as f64 / n,
            }
        })
        .collect();
    out.sort_by(|a, b| (a.method, a.t.to_bits(), a.a).cmp(&(b.method, b.t.to_bits(), b.a)));
    out
}

/// Replicates the study for one scenario. Replicate `r` draws its data and
/// all of its randomness from `seed.child("rep").index(r)`.
pub fn monte_carlo(spec: &ScenarioSpec, grid: &Arc<TimeGrid>, cfg: &MonteCarloConfig, seed: &SeedStream) -> Result<MetricsReport> {
    monte_carlo_until(spec, grid, cfg, seed, &AtomicBool::new(false))
}

/// As [`monte_carlo`], but replicates not yet started when `stop` is set
/// are skipped; the report covers the completed ones.
pub fn monte_carlo_until(
    spec: &ScenarioSpec,
    grid: &Arc<TimeGrid>,
    cfg: &MonteCarloConfig,
    seed: &SeedStream,
    stop: &AtomicBool,
) -> Result<MetricsReport> {
    spec.validate()?;
    if cfg.reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let eval: Vec<usize> = cfg
        .eval_times
        .iter()
        .map(|&t| grid.index_of(t).ok_or_else(|| Error::invalid(format!("evaluation time {t} is not a grid point"))))
        .collect::<Result<_>>()?;
    let truths = [
        truth_oracle(spec, grid, 0, cfg.n_super, seed)?,
        truth_oracle(spec, grid, 1, cfg.n_super, seed)?,
    ];
    let outcomes: Vec<(usize, Result<(Vec<Record>, Vec<(Method, String)>)>)> = (0..cfg.reps)
        .into_par_iter()
        .filter(|_| !stop.load(Ordering::Relaxed))
        .map(|rep| {
            let rs = seed.child("rep").index(rep as u64);
            let res = gen_dataset(spec, &rs)
                .and_then(|data| run_competitors(&data, grid, &cfg.competitors, &rs))
                .map(|res| {
                    let mut recs = Vec::new();
                    for c in &res.curves {
                        for a in 0..2u8 {
                            for (&j, &t) in eval.iter().zip(&cfg.eval_times) {
                                let e = c.estimates[a as usize][j];
                                recs.push(Record {
                                    method: c.method,
                                    t,
                                    a,
                                    rep,
                                    estimate: e.theta,
                                    se: e.se,
                                    ci_lo: e.ci_lo,
                                    ci_hi: e.ci_hi,
                                    truth: truths[a as usize].values[j],
                                });
                            }
                        }
                    }
                    (recs, res.failures)
                });
            (rep, res)
        })
        .collect();
    let attempted = outcomes.len();
    if attempted == 0 {
        return Err(Error::invalid("stopped before any replicate ran"));
    }
    let mut records = Vec::new();
    let mut failed_reps = Vec::new();
    let mut method_failures = Vec::new();
    for (rep, r) in outcomes {
        match r {
            Ok((recs, fails)) => {
                records.extend(recs);
                method_failures.extend(fails.into_iter().map(|(m, e)| (rep, m, e)));
            }
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                failed_reps.push((rep, e.to_string()));
            }
        }
    }
    if failed_reps.len() as f64 > MAX_FAILURE_RATE * attempted as f64 {
        return Err(Error::Numerical(format!(
            "{} of {} replicates failed (first: {})",
            failed_reps.len(),
            attempted,
            failed_reps[0].1
        )));
    }
    Ok(MetricsReport {
        spec: spec.clone(),
        summary: summarize(&records, &truths),
        records,
        failed_reps,
        method_failures,
        skipped_reps: cfg.reps - attempted,
    })
}
