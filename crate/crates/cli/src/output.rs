//! CSV writers shared by the commands.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};

use fedsurv_core::eif::EstimateWithCI;
use fedsurv_core::fedopt::FedCurveEstimate;
use fedsurv_core::simbench::{CompetitorResults, Method};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// One `(method, arm)` curve over the grid.
pub struct CurveRows<'a> {
    pub method: &'a str,
    pub a: u8,
    pub grid: &'a [f64],
    pub estimates: Vec<EstimateWithCI>,
}

pub fn write_curves(path: &Path, curves: &[CurveRows]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["method", "t", "a", "estimate", "se", "ci_lo", "ci_hi"])?;
    for c in curves {
        for (t, e) in c.grid.iter().zip(&c.estimates) {
            w.write_record([
                c.method.to_string(),
                t.to_string(),
                c.a.to_string(),
                e.theta.to_string(),
                e.se.to_string(),
                e.ci_lo.to_string(),
                e.ci_hi.to_string(),
            ])?;
        }
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn competitor_curves(res: &CompetitorResults) -> Vec<CurveRows<'_>> {
    let grid = res.grid.points();
    res.curves
        .iter()
        .flat_map(|c| {
            (0..2u8).map(move |a| CurveRows {
                method: c.method.name(),
                a,
                grid,
                estimates: c.estimates[a as usize].clone(),
            })
        })
        .collect()
}

pub fn fed_curves<'a>(method: Method, fed: &'a FedCurveEstimate) -> Vec<CurveRows<'a>> {
    (0..2u8)
        .map(|a| CurveRows {
            method: method.name(),
            a,
            grid: &fed.grid,
            estimates: fed.points[a as usize].iter().map(|p| p.estimate).collect(),
        })
        .collect()
}

pub fn write_weights(path: &Path, fed: &FedCurveEstimate) -> Result<()> {
    fed.write_weights_csv(create(path)?).with_context(|| format!("writing {}", path.display()))
}

/// Grid points whose weighting fell back to the target-only estimate.
pub fn fallback_points(fed: &FedCurveEstimate) -> Vec<String> {
    fed.points
        .iter()
        .flatten()
        .filter_map(|p| p.error.as_ref().map(|e| format!("t={} a={}: {e}", p.t, p.a)))
        .collect()
}
