use std::fs::File;

use anyhow::{bail, Context, Result};

use fedsurv_core::simbench::{summarize, Record, Summary, TruthCurve};

use crate::config::RunConfig;
use crate::output::create;
use crate::Status;

pub fn print_summary(summary: &[Summary]) {
    println!(
        "{:<9} {:>6} {:>2} {:>5} {:>8} {:>9} {:>8} {:>7} {:>8} {:>6}",
        "method", "t", "a", "reps", "truth", "bias", "rmse", "rrmse", "width", "cp"
    );
    for s in summary {
        println!(
            "{:<9} {:>6} {:>2} {:>5} {:>8.4} {:>9.5} {:>8.5} {:>7.3} {:>8.4} {:>6.1}",
            s.method.name(),
            s.t,
            s.a,
            s.reps,
            s.truth,
            s.mean_bias,
            s.rmse,
            s.rrmse,
            s.mean_ci_width,
            s.cp
        );
    }
}

/// Re-summarizes `records.csv`. Truths come from the records themselves, so
/// their Monte Carlo standard errors are not available.
pub fn run(cfg: &RunConfig) -> Result<Status> {
    let dir = cfg.input.as_ref().expect("validated");
    let path = dir.join("records.csv");
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut records = Vec::new();
    for (i, r) in rdr.deserialize::<Record>().enumerate() {
        records.push(r.with_context(|| format!("{}: row {}", path.display(), i + 1))?);
    }
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    let truths = [0u8, 1].map(|a| {
        let mut pts: Vec<(f64, f64)> = records.iter().filter(|r| r.a == a).map(|r| (r.t, r.truth)).collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        pts.dedup_by(|x, y| x.0 == y.0);
        TruthCurve {
            a,
            grid: pts.iter().map(|p| p.0).collect(),
            values: pts.iter().map(|p| p.1).collect(),
            se: vec![f64::NAN; pts.len()],
            n_super: 0,
        }
    });
    let summary = summarize(&records, &truths);
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("summary.csv"))?);
    w.write_record(["method", "t", "a", "reps", "truth", "mean_bias", "rmse", "rrmse", "mean_ci_width", "cp"])?;
    for s in &summary {
        w.write_record([
            s.method.name().to_string(),
            s.t.to_string(),
            s.a.to_string(),
            s.reps.to_string(),
            s.truth.to_string(),
            s.mean_bias.to_string(),
            s.rmse.to_string(),
            s.rrmse.to_string(),
            s.mean_ci_width.to_string(),
            s.cp.to_string(),
        ])?;
    }
    w.flush()?;
    print_summary(&summary);
    Ok(Status::Clean)
}
