//! The estimators compared in the simulation study.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eif::{EstimateWithCI, EstimatorId, InfluenceTable};
use crate::error::{Error, Result};
use crate::fedopt::{cells_from_table, fed_curve, FedConfig, FedCurveEstimate, WeightMethod};
use crate::nuisance::{build_nuisance_bundle, make_folds, BundleMode, NuisanceConfig};
use crate::seed::SeedStream;
use crate::survival::{Dataset, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TGT")]
    Tgt,
    #[serde(rename = "POOL")]
    Pool,
    #[serde(rename = "IVW")]
    Ivw,
    #[serde(rename = "FED")]
    Fed,
    #[serde(rename = "FED-BOOT")]
    FedBoot,
    #[serde(rename = "CCOD")]
    Ccod,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Tgt, Method::Pool, Method::Ivw, Method::Fed, Method::FedBoot, Method::Ccod];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Tgt => "TGT",
            Method::Pool => "POOL",
            Method::Ivw => "IVW",
            Method::Fed => "FED",
            Method::FedBoot => "FED-BOOT",
            Method::Ccod => "CCOD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompetitorConfig {
    pub nuisance: NuisanceConfig,
    pub fed: FedConfig,
    pub methods: Vec<Method>,
}

impl Default for CompetitorConfig {
    fn default() -> Self {
        CompetitorConfig {
            nuisance: NuisanceConfig::default(),
            fed: FedConfig::default(),
            methods: Method::ALL.to_vec(),
        }
    }
}

/// One method's estimates over the grid: `estimates[a][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodCurve {
    pub method: Method,
    pub estimates: [Vec<EstimateWithCI>; 2],
}

/// All methods' results on one dataset.
#[derive(Debug, Clone)]
pub struct CompetitorResults {
    pub grid: Arc<TimeGrid>,
    pub curves: Vec<MethodCurve>,
    /// Methods that failed, with the error message.
    pub failures: Vec<(Method, String)>,
    pub fed: Option<FedCurveEstimate>,
    pub fed_boot: Option<FedCurveEstimate>,
    pub notes: Vec<String>,
}

impl CompetitorResults {
    pub fn curve(&self, m: Method) -> Option<&MethodCurve> {
        self.curves.iter().find(|c| c.method == m)
    }
}

fn table_curve(method: Method, table: &InfluenceTable, e: EstimatorId) -> Result<MethodCurve> {
    let l = table.grid().len();
    let arm = |a: u8| (0..l).map(|j| table.estimate(e, j, a)).collect::<Result<Vec<_>>>();
    Ok(MethodCurve {
        method,
        estimates: [arm(0)?, arm(1)?],
    })
}

fn fed_method_curve(method: Method, fed: &FedCurveEstimate) -> MethodCurve {
    MethodCurve {
        method,
        estimates: [0, 1].map(|a: usize| fed.points[a].iter().map(|p| p.estimate).collect()),
    }
}

fn table_for(data: &Dataset, grid: &Arc<TimeGrid>, mode: BundleMode, cfg: &NuisanceConfig, seed: &SeedStream) -> Result<(InfluenceTable, Vec<String>)> {
    let folds = make_folds(data, cfg.folds, seed)?;
    let bundle = build_nuisance_bundle(data, &folds, grid, mode, cfg, seed)?;
    Ok((InfluenceTable::from_bundle(&bundle)?, bundle.notes))
}

/// Inverse-variance weighted combination of per-site estimates.
pub fn ivw_combine(estimates: &[EstimateWithCI]) -> EstimateWithCI {
    let n_eff = estimates.iter().map(|e| e.n_effective).sum();
    let zero: Vec<&EstimateWithCI> = estimates.iter().filter(|e| e.se <= 1e-12).collect();
    if !zero.is_empty() {
        // sites with no sampling variability dominate; average them
        let theta = zero.iter().map(|e| e.theta).sum::<f64>() / zero.len() as f64;
        return EstimateWithCI::wald(theta, 0.0, n_eff);
    }
    let w: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.se * e.se)).collect();
    let total: f64 = w.iter().sum();
    let theta = estimates.iter().zip(&w).map(|(e, w)| e.theta * w).sum::<f64>() / total;
    EstimateWithCI::wald(theta, (1.0 / total).sqrt(), n_eff)
}

fn ivw(data: &Dataset, grid: &Arc<TimeGrid>, cfg: &NuisanceConfig, seed: &SeedStream) -> Result<MethodCurve> {
    let mut per_site = Vec::new();
    for k in 0..data.n_sites() {
        let Ok(site) = data.site_only(k) else { continue };
        let (table, _) = table_for(&site, grid, BundleMode::Federated, cfg, seed)?;
        per_site.push(table_curve(Method::Tgt, &table, EstimatorId::Target)?);
    }
    let l = grid.len();
    let arm = |a: usize| -> Vec<EstimateWithCI> {
        (0..l)
            .map(|j| ivw_combine(&per_site.iter().map(|c| c.estimates[a][j]).collect::<Vec<_>>()))
            .collect()
    };
    Ok(MethodCurve {
        method: Method::Ivw,
        estimates: [arm(0), arm(1)],
    })
}

/// Runs every configured method on `data`. A failing method is recorded and
/// the others still run; only a failure of the shared target-side fit is
/// fatal.
pub fn run_competitors(data: &Dataset, grid: &Arc<TimeGrid>, cfg: &CompetitorConfig, seed: &SeedStream) -> Result<CompetitorResults> {
    let wants = |m: Method| cfg.methods.contains(&m);
    let mut out = CompetitorResults {
        grid: grid.clone(),
        curves: Vec::new(),
        failures: Vec::new(),
        fed: None,
        fed_boot: None,
        notes: Vec::new(),
    };
    let needs_fed_table = wants(Method::Tgt) || wants(Method::Fed) || wants(Method::FedBoot);
    if needs_fed_table {
        let (table, notes) = table_for(data, grid, BundleMode::Federated, &cfg.nuisance, seed)?;
        out.notes.extend(notes);
        if wants(Method::Tgt) {
            out.curves.push(table_curve(Method::Tgt, &table, EstimatorId::Target)?);
        }
        if wants(Method::Fed) || wants(Method::FedBoot) {
            let mut fcfg = cfg.fed.clone();
            if !wants(Method::FedBoot) {
                fcfg.bootstrap = 0;
            }
            let cells = cells_from_table(&table, &fcfg, seed)?;
            for (m, wm) in [(Method::Fed, WeightMethod::Plain), (Method::FedBoot, WeightMethod::Bootstrap)] {
                if !wants(m) {
                    continue;
                }
                match fed_curve(grid, &cells, &fcfg, wm) {
                    Ok(fc) => {
                        out.curves.push(fed_method_curve(m, &fc));
                        match m {
                            Method::Fed => out.fed = Some(fc),
                            _ => out.fed_boot = Some(fc),
                        }
                    }
                    Err(e) => out.failures.push((m, e.to_string())),
                }
            }
        }
    }
    if wants(Method::Pool) {
        match table_for(&data.pooled_as_target(), grid, BundleMode::Federated, &cfg.nuisance, seed)
            .and_then(|(t, _)| table_curve(Method::Pool, &t, EstimatorId::Target))
        {
            Ok(c) => out.curves.push(c),
            Err(e) => out.failures.push((Method::Pool, e.to_string())),
        }
    }
    if wants(Method::Ivw) {
        match ivw(data, grid, &cfg.nuisance, seed) {
            Ok(c) => out.curves.push(c),
            Err(e) => out.failures.push((Method::Ivw, e.to_string())),
        }
    }
    if wants(Method::Ccod) {
        let mut ncfg = cfg.nuisance.clone();
        ncfg.sharing = crate::nuisance::Sharing::Pooled;
        match table_for(data, grid, BundleMode::Ccod, &ncfg, seed).and_then(|(t, _)| table_curve(Method::Ccod, &t, EstimatorId::Ccod)) {
            Ok(c) => out.curves.push(c),
            Err(e) => out.failures.push((Method::Ccod, e.to_string())),
        }
    }
    out.curves.sort_by_key(|c| c.method);
    Ok(out)
}
