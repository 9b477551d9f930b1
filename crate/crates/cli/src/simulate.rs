use std::sync::atomic::AtomicBool;

use anyhow::{Context, Result};

use fedsurv_core::simbench::{gen_dataset, monte_carlo_until, run_competitors, MetricsReport};
use fedsurv_core::SeedStream;

use crate::config::RunConfig;
use crate::output::{competitor_curves, create, write_curves, write_weights};
use crate::report::print_summary;
use crate::Status;

pub fn run(cfg: &RunConfig, stop: &AtomicBool) -> Result<Status> {
    cfg.echo(&cfg.out)?;
    let grid = cfg.grid()?;
    let spec = cfg.scenario_spec();
    let seed = SeedStream::new(cfg.seed());
    let report = monte_carlo_until(&spec, &grid, &cfg.monte_carlo(), &seed, stop).context("simulation failed")?;
    report.write_records_csv(create(&cfg.out.join("records.csv"))?)?;
    report.write_summary_csv(create(&cfg.out.join("summary.csv"))?)?;
    write_failures(cfg, &report)?;
    if let Some(r) = cfg.dump_rep {
        dump_replicate(cfg, r)?;
    }
    print_summary(&report.summary);
    if report.skipped_reps > 0 {
        eprintln!("stopped early: {} replicates skipped", report.skipped_reps);
    }
    let degraded = !report.failed_reps.is_empty() || !report.method_failures.is_empty() || report.skipped_reps > 0;
    Ok(if degraded { Status::Degraded } else { Status::Clean })
}

fn write_failures(cfg: &RunConfig, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("failures.csv"))?);
    w.write_record(["rep", "method", "message"])?;
    for (rep, msg) in &report.failed_reps {
        w.write_record([rep.to_string(), "*".into(), msg.clone()])?;
    }
    for (rep, m, msg) in &report.method_failures {
        w.write_record([rep.to_string(), m.name().into(), msg.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Regenerates replicate `r` and writes its data and curves; the streams are
/// the ones the Monte Carlo loop used, so the curves match its records.
fn dump_replicate(cfg: &RunConfig, r: usize) -> Result<()> {
    let dir = cfg.out.join(format!("rep{r}"));
    let grid = cfg.grid()?;
    let rs = SeedStream::new(cfg.seed()).child("rep").index(r as u64);
    let data = gen_dataset(&cfg.scenario_spec(), &rs)?;
    data.write_csv(create(&dir.join("data.csv"))?)?;
    let res = run_competitors(&data, &grid, &cfg.competitors(), &rs)?;
    write_curves(&dir.join("curves.csv"), &competitor_curves(&res))?;
    if let Some(f) = &res.fed {
        write_weights(&dir.join("weights_fed.csv"), f)?;
    }
    if let Some(f) = &res.fed_boot {
        write_weights(&dir.join("weights_fed_boot.csv"), f)?;
    }
    Ok(())
}
