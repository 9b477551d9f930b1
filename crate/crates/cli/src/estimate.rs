use std::fs::File;

use anyhow::{Context, Result};

use fedsurv_core::simbench::{run_competitors, Method};
use fedsurv_core::{Dataset, SeedStream};

use crate::config::RunConfig;
use crate::output::{competitor_curves, fallback_points, write_curves, write_weights};
use crate::Status;

pub fn read_data(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.data.as_ref().expect("validated");
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Dataset::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cfg: &RunConfig) -> Result<Status> {
    let data = read_data(cfg)?;
    cfg.echo(&cfg.out)?;
    let grid = cfg.grid()?;
    let mut seed = SeedStream::new(cfg.seed());
    if let Some(r) = cfg.replicate {
        seed = seed.child("rep").index(r as u64);
    }
    let mut comp = cfg.competitors();
    if data.n_sites() == 1 {
        eprintln!("note: the data hold only the target site; reporting TGT only");
        comp.methods = vec![Method::Tgt];
    }
    let res = run_competitors(&data, &grid, &comp, &seed).context("estimation failed")?;
    write_curves(&cfg.out.join("curves.csv"), &competitor_curves(&res))?;
    let mut degraded = false;
    for (name, fed) in [("fed", &res.fed), ("fed_boot", &res.fed_boot)] {
        if let Some(f) = fed {
            write_weights(&cfg.out.join(format!("weights_{name}.csv")), f)?;
            let fb = fallback_points(f);
            if !fb.is_empty() {
                degraded = true;
                eprintln!("warning: {} {name} points fell back to the target-only estimate (first: {})", fb.len(), fb[0]);
            }
        }
    }
    for (m, e) in &res.failures {
        degraded = true;
        eprintln!("warning: {} failed: {e}", m.name());
    }
    for n in &res.notes {
        log::info!("{n}");
    }
    Ok(if degraded { Status::Degraded } else { Status::Clean })
}
