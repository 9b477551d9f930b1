//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;

use std::thread;
use std::time::Duration;

use fedsurv_core::eif::{h_process_with_hazard, InfluenceTable};
use fedsurv_core::fednet::{coordinator_run, loopback_pair, site_run, CoordinatorConfig, CoordinatorOutput, SiteEndpoint};
use fedsurv_core::fedopt::{cells_from_table, fed_curve, FedCurveEstimate, WeightMethod};
use fedsurv_core::nuisance::{build_nuisance_bundle, make_folds};
use fedsurv_core::nuisance::{BundleMode, NuisanceBundle};

use fedsurv_core::simbench::dgp::{draw_latent, event_log_hazard, true_censoring_survival, true_survival, WEIBULL_SCALE, WEIBULL_SHAPE};
use fedsurv_core::simbench::Knobs;
use fedsurv_core::{Dataset, Observation, SeedStream, TimeGrid};

/// Monte Carlo mean and standard error of `H(t)` under the target-site
/// simulation model with the true `S`, `G` and cumulative hazard plugged in,
/// on a grid of step `step` up to the largest of `times`.
pub fn h_mean_true_nuisances(times: &[f64], draws: usize, step: f64, seed: &SeedStream) -> Vec<(f64, f64)> {
    let tau = times.iter().cloned().fold(0.0, f64::max);
    let grid = TimeGrid::uniform(tau, step).unwrap();
    let pts = grid.points().to_vec();
    let idx: Vec<usize> = times.iter().map(|&t| grid.index_of(t).unwrap()).collect();
    let k = Knobs::default();
    let mut rng = seed.rng();
    let l = pts.len();
    let (mut s, mut g, mut dl, mut h) = (vec![0.0; l], vec![0.0; l], vec![0.0; l], vec![0.0; l]);
    let mut sum = vec![0.0; times.len()];
    let mut sum_sq = vec![0.0; times.len()];
    for _ in 0..draws {
        let d = draw_latent(&mut rng, &k);
        let rate = WEIBULL_SCALE * event_log_hazard(&d.x, d.a, &k).exp();
        for j in 0..l {
            s[j] = true_survival(&d.x, d.a, &k, pts[j]);
            g[j] = true_censoring_survival(&d.x, d.a, &k, pts[j]);
            dl[j] = if j == 0 { 0.0 } else { rate * (pts[j].powf(WEIBULL_SHAPE) - pts[j - 1].powf(WEIBULL_SHAPE)) };
        }
        let y = d.t.min(d.c);
        h_process_with_hazard(grid.interval_index(y), d.t <= d.c, &s, &g, Some(&dl), &mut h);
        for (m, &j) in idx.iter().enumerate() {
            sum[m] += h[j];
            sum_sq[m] += h[j] * h[j];
        }
    }
    let n = draws as f64;
    sum.iter()
        .zip(&sum_sq)
        .map(|(&a, &b)| {
            let mean = a / n;
            (mean, ((b / n - mean * mean) / (n - 1.0)).sqrt())
        })
        .collect()
}

/// One-covariate discrete-time model with known nuisances. Times live on
/// the integers so the grid `0, 1, ..., tau` represents them exactly.
///
/// Target `X ~ U(0, 1)`; source `X` has density `(1 + x) / 1.5`, so the
/// density ratio is `1.5 / (1 + x)`. Event and censoring times are
/// geometric with per-day hazards depending on `x` (and `a` for events).
pub struct DiscreteModel;

impl DiscreteModel {
    pub fn event_hazard(x: f64, a: u8) -> f64 {
        0.02 + 0.04 * x + 0.01 * a as f64
    }

    pub fn censoring_hazard(x: f64) -> f64 {
        0.01 + 0.03 * x
    }

    pub fn propensity(x: f64) -> f64 {
        1.0 / (1.0 + (0.5 - x).exp())
    }

    pub fn omega(x: f64) -> f64 {
        1.5 / (1.0 + x)
    }

    /// Target-population `P(T^a > t)`.
    pub fn truth(t: f64, a: u8) -> f64 {
        let c = 0.02 + 0.01 * a as f64;
        let e = t + 1.0;
        ((1.0 - c).powf(e) - (1.0 - c - 0.04).powf(e)) / (0.04 * e)
    }

    fn geometric<R: Rng>(rng: &mut R, h: f64) -> f64 {
        let u: f64 = rng.random();
        ((1.0 - u).ln() / (1.0 - h).ln()).floor() + 1.0
    }

    fn draw<R: Rng>(rng: &mut R, site: usize) -> Observation {
        let u: f64 = rng.random();
        let x = if site == 0 { u } else { -1.0 + (1.0 + 3.0 * u).sqrt() };
        let a = (rng.random::<f64>() < Self::propensity(x)) as u8;
        let t = Self::geometric(rng, Self::event_hazard(x, a));
        let c = Self::geometric(rng, Self::censoring_hazard(x));
        Observation::new(vec![x], a, t.min(c), (t <= c) as u8, site).unwrap()
    }

    pub fn dataset(n0: usize, n1: usize, seed: &SeedStream) -> Dataset {
        let mut rng = seed.rng();
        let mut obs: Vec<Observation> = (0..n0).map(|_| Self::draw(&mut rng, 0)).collect();
        obs.extend((0..n1).map(|_| Self::draw(&mut rng, 1)));
        Dataset::new(obs, Some(if n1 > 0 { 2 } else { 1 })).unwrap()
    }
}

/// Which nuisances are the true ones; the others are fixed wrong guesses.
#[derive(Debug, Clone, Copy)]
pub struct Correct {
    pub outcome: bool,
    pub weights: bool,
}

/// A federated bundle built from the known (or deliberately wrong) nuisances.
pub fn discrete_bundle(data: &Dataset, grid: &Arc<TimeGrid>, which: Correct) -> NuisanceBundle {
    let mut b = NuisanceBundle::blank(data, grid, BundleMode::Federated);
    let l = grid.len();
    for (i, o) in data.obs().iter().enumerate() {
        let x = o.x[0];
        for a in 0..2u8 {
            let h = if which.outcome { DiscreteModel::event_hazard(x, a) } else { 0.06 };
            for (j, &t) in grid.points().iter().enumerate() {
                b.surv[a as usize][i * l + j] = (1.0 - h).powf(t);
            }
        }
        let hc = if which.weights { DiscreteModel::censoring_hazard(x) } else { 0.005 };
        for (j, &t) in grid.points().iter().enumerate() {
            b.cens[i * l + j] = (1.0 - hc).powf(t);
        }
        b.pi1[i] = if which.weights { DiscreteModel::propensity(x) } else { 0.5 };
        if let Some(w) = b.omega.as_mut() {
            w[i] = if which.weights && o.site == 1 { DiscreteModel::omega(x) } else { 1.0 };
        }
    }
    b
}

/// Mean bias and its Monte Carlo standard error of the target-only and
/// transported (site 1) estimators at each `(t, a)`, over `reps` datasets
/// of `n` rows split evenly between the two sites.
pub fn discrete_bias(which: Correct, n: usize, reps: usize, times: &[f64], seed: &SeedStream) -> Vec<(String, f64, f64)> {
    use fedsurv_core::eif::EstimatorId;
    let tau = times.iter().cloned().fold(0.0, f64::max);
    let grid = Arc::new(TimeGrid::uniform(tau, 1.0).unwrap());
    let mut errs: Vec<(String, Vec<f64>)> = Vec::new();
    for r in 0..reps {
        let data = DiscreteModel::dataset(n / 2, n - n / 2, &seed.index(r as u64));
        let table = InfluenceTable::from_bundle(&discrete_bundle(&data, &grid, which)).unwrap();
        let mut m = 0;
        for e in [EstimatorId::Target, EstimatorId::Site(1)] {
            for &t in times {
                let j = grid.index_of(t).unwrap();
                for a in 0..2u8 {
                    let err = table.theta(e, j, a).unwrap() - DiscreteModel::truth(t, a);
                    if r == 0 {
                        errs.push((format!("{e} t={t} a={a}"), Vec::new()));
                    }
                    errs[m].1.push(err);
                    m += 1;
                }
            }
        }
    }
    errs.into_iter()
        .map(|(label, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (label, mean, (var / n).sqrt())
        })
        .collect()
}

pub fn rows(data: &Dataset, site: usize) -> Vec<Observation> {
    data.site_indices(site).into_iter().map(|i| data.obs()[i].clone()).collect()
}

/// Runs the coordinator against in-process sites; sites in `silent` never answer.
pub fn run(data: &Dataset, cfg: &CoordinatorConfig, silent: &[usize]) -> CoordinatorOutput {
    let target = rows(data, 0);
    let mut endpoints = Vec::new();
    let mut handles = Vec::new();
    for k in 1..data.n_sites() {
        let (coord, mut site) = loopback_pair();
        endpoints.push(SiteEndpoint {
            site: k,
            transport: Box::new(coord),
        });
        if silent.contains(&k) {
            handles.push(thread::spawn(move || {
                thread::sleep(Duration::from_millis(300));
                drop(site);
            }));
        } else {
            let r = rows(data, k);
            handles.push(thread::spawn(move || {
                let _ = site_run(k, &r, &mut site, Duration::from_secs(30));
            }));
        }
    }
    let out = coordinator_run(&target, endpoints, cfg).unwrap();
    for h in handles {
        h.join().unwrap();
    }
    out
}

pub fn centralized(data: &Dataset, cfg: &CoordinatorConfig, method: WeightMethod) -> FedCurveEstimate {
    let seed = SeedStream::new(cfg.seed);
    let folds = make_folds(data, cfg.nuisance.folds, &seed).unwrap();
    let b = build_nuisance_bundle(data, &folds, &cfg.grid, BundleMode::Federated, &cfg.nuisance, &seed).unwrap();
    let table = InfluenceTable::from_bundle(&b).unwrap();
    let cells = cells_from_table(&table, &cfg.fed, &seed).unwrap();
    fed_curve(&cfg.grid, &cells, &cfg.fed, method).unwrap()
}

