//! Cross-fitted nuisance predictions for every observation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ensemble::{fit_survival_ensemble, Candidate, SurvivalModel, ALL_CANDIDATES};
use super::folds::FoldAssignment;
use super::propensity::{fit_binary, BinaryModel};
use super::ratio::{fit_density_ratio_coarse, fit_density_ratio_pooled, RatioModel, SiteCovariateSummary};
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::survival::{Dataset, Observation, Outcome, TimeGrid};

/// Survival values are floored here before they can appear in a denominator.
pub const SURVIVAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleMode {
    /// Site-specific nuisances for the target-only and transported estimators.
    Federated,
    /// Pooled nuisances for the common-conditional-outcome estimator.
    Ccod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// Individual covariates may be pooled (logistic density ratio).
    Pooled,
    /// Only (mean, covariance) summaries leave a site (exponential tilting).
    CoarseOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// Cross-fitting folds `M`.
    pub folds: usize,
    /// Folds for model selection inside each training set.
    pub cv_folds: usize,
    /// Positivity bound: probabilities are clipped to at least `1/eta_cap`
    /// and density ratios into `[1/eta_cap, eta_cap]`.
    pub eta_cap: f64,
    pub sharing: Sharing,
    pub candidates: Vec<Candidate>,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            folds: 5,
            cv_folds: 3,
            eta_cap: 20.0,
            sharing: Sharing::Pooled,
            candidates: ALL_CANDIDATES.to_vec(),
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_cap > 1.0 && self.eta_cap.is_finite()) {
            return Err(Error::invalid(format!("eta_cap must exceed 1, got {}", self.eta_cap)));
        }
        if self.cv_folds < 2 {
            return Err(Error::invalid("cv_folds must be at least 2"));
        }
        if self.candidates.is_empty() {
            return Err(Error::invalid("at least one survival candidate is required"));
        }
        Ok(())
    }
}

/// Number of predictions moved by clipping, among values that can enter a
/// denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipCounts {
    pub propensity: usize,
    pub censoring: usize,
    pub ratio: usize,
    pub site_propensity: usize,
    pub survival_floor: usize,
    pub checked: usize,
}

impl ClipCounts {
    pub fn add(&mut self, o: &ClipCounts) {
        self.propensity += o.propensity;
        self.censoring += o.censoring;
        self.ratio += o.ratio;
        self.site_propensity += o.site_propensity;
        self.survival_floor += o.survival_floor;
        self.checked += o.checked;
    }

    pub fn total(&self) -> usize {
        self.propensity + self.censoring + self.ratio + self.site_propensity + self.survival_floor
    }

    pub fn rate(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.total() as f64 / self.checked as f64
        }
    }
}

/// Which data a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Site(usize),
    Pooled,
}

/// Training set of a model: all rows of `scope` except fold `held_out`
/// (`None` means every row of the scope).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub scope: Scope,
    pub held_out: Option<usize>,
}

impl Origin {
    fn fold(scope: Scope, m: usize) -> Self {
        Origin { scope, held_out: Some(m) }
    }

    /// True when a row of `site` in fold `fold` was not used for training.
    pub fn excludes(&self, site: usize, fold: usize) -> bool {
        match (self.held_out, self.scope) {
            (Some(m), _) => m == fold,
            (None, Scope::Site(s)) => s != site,
            (None, Scope::Pooled) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub outcome: Origin,
    pub censoring: Origin,
    pub propensity: Origin,
    pub ratio: Option<Origin>,
    pub site_propensity: Option<Origin>,
}

impl Provenance {
    pub fn is_cross_fitted(&self, site: usize, fold: usize) -> bool {
        [Some(self.outcome), Some(self.censoring), Some(self.propensity), self.ratio, self.site_propensity]
            .iter()
            .flatten()
            .all(|o| o.excludes(site, fold))
    }
}

/// Nuisance predictions for the rows of one site, in local row order.
#[derive(Debug, Clone)]
pub struct SiteNuisance {
    pub grid: Arc<TimeGrid>,
    /// `S(t | a, X_i)` for `a = 0, 1`, row-major `n x L`.
    pub surv: [Vec<f64>; 2],
    /// `G(t | A_i, X_i)`, row-major `n x L`.
    pub cens: Vec<f64>,
    /// `P(A = 1 | X_i)` at the row's own site.
    pub pi1: Vec<f64>,
    /// Density ratio to the target; 1 on target rows.
    pub omega: Vec<f64>,
    pub clip: ClipCounts,
    pub provenance: Vec<Provenance>,
    pub notes: Vec<String>,
}

impl SiteNuisance {
    fn new(grid: &Arc<TimeGrid>, n: usize) -> Self {
        let l = grid.len();
        let origin = Origin::fold(Scope::Pooled, 0);
        SiteNuisance {
            grid: grid.clone(),
            surv: [vec![1.0; n * l], vec![1.0; n * l]],
            cens: vec![1.0; n * l],
            pi1: vec![0.5; n],
            omega: vec![1.0; n],
            clip: ClipCounts::default(),
            provenance: vec![
                Provenance {
                    outcome: origin,
                    censoring: origin,
                    propensity: origin,
                    ratio: None,
                    site_propensity: None,
                };
                n
            ],
            notes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi1.is_empty()
    }
}

fn clip_count(v: &mut f64, lo: f64, hi: f64) -> bool {
    let c = v.clamp(lo, hi);
    let moved = c != *v;
    *v = c;
    moved
}

/// Clips and counts the values of row `r` that can reach a denominator.
fn finalize_row(nu: &mut SiteNuisance, r: usize, o: &Observation, cap: f64) {
    let l = nu.grid.len();
    let idx = nu.grid.interval_index(o.y).min(l - 1);
    let lo = 1.0 / cap;
    let base = r * l;
    for a in 0..2 {
        for j in 0..l {
            let v = &mut nu.surv[a][base + j];
            if *v < SURVIVAL_FLOOR {
                *v = SURVIVAL_FLOOR;
                if a == o.a as usize && j <= idx {
                    nu.clip.survival_floor += 1;
                }
            }
            *v = v.min(1.0);
        }
    }
    nu.clip.checked += idx + 1;
    for j in 0..l {
        let moved = clip_count(&mut nu.cens[base + j], lo, 1.0);
        if j < idx.max(1) {
            nu.clip.checked += 1;
            nu.clip.censoring += moved as usize;
        }
    }
    let mut pa = if o.a == 1 { nu.pi1[r] } else { 1.0 - nu.pi1[r] };
    nu.clip.checked += 1;
    if clip_count(&mut pa, lo, 1.0 - lo) {
        nu.clip.propensity += 1;
    }
    nu.pi1[r] = if o.a == 1 { pa } else { 1.0 - pa };
    nu.pi1[r] = nu.pi1[r].clamp(lo, 1.0 - lo);
}

/// Fits the censoring and propensity models, plus the outcome model when
/// `with_outcome` is set.
fn fit_models(
    train: &[&Observation],
    grid: &Arc<TimeGrid>,
    cfg: &NuisanceConfig,
    seed: &SeedStream,
    notes: &mut Vec<String>,
    label: &str,
    with_outcome: bool,
) -> Result<(Option<SurvivalModel>, SurvivalModel, BinaryModel)> {
    let s = if with_outcome {
        let s = fit_survival_ensemble(train, Outcome::Event, grid, &cfg.candidates, cfg.cv_folds, &seed.child("outcome"))?;
        if s.degenerate {
            notes.push(format!("{label}: no events, marginal KM outcome model"));
        }
        Some(s.model)
    } else {
        None
    };
    let g = fit_survival_ensemble(train, Outcome::Censoring, grid, &cfg.candidates, cfg.cv_folds, &seed.child("censoring"))?;
    if g.degenerate {
        notes.push(format!("{label}: no censoring, marginal KM censoring model"));
    }
    let x: Vec<&[f64]> = train.iter().map(|o| o.x.as_slice()).collect();
    let a: Vec<bool> = train.iter().map(|o| o.a == 1).collect();
    let pi = match fit_binary(&x, &a, cfg.cv_folds, &seed.child("propensity")) {
        Ok(m) => {
            if m.degenerate {
                notes.push(format!("{label}: separated propensity fit"));
            }
            m
        }
        Err(Error::DegeneratePropensity(msg)) => {
            notes.push(format!("{label}: degenerate propensity ({msg})"));
            let p = a.iter().filter(|v| **v).count() as f64 / a.len() as f64;
            BinaryModel::constant(p.clamp(0.01, 0.99), x[0].len())
        }
        Err(e) => return Err(e),
    };
    Ok((s, g.model, pi))
}

fn predict_rows(
    nu: &mut SiteNuisance,
    rows: &[&Observation],
    which: &[usize],
    s: Option<&SurvivalModel>,
    g: &SurvivalModel,
    pi: &BinaryModel,
) -> Result<()> {
    let l = nu.grid.len();
    for &r in which {
        let o = rows[r];
        let span = r * l..(r + 1) * l;
        if let Some(s) = s {
            s.survival_into(&o.x, 0, &mut nu.surv[0][span.clone()])?;
            s.survival_into(&o.x, 1, &mut nu.surv[1][span.clone()])?;
        }
        g.survival_into(&o.x, o.a, &mut nu.cens[span])?;
        nu.pi1[r] = pi.predict(&o.x);
    }
    Ok(())
}

fn check_labels(rows: &[&Observation], labels: &[usize], m: usize, site: usize) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::invalid("fold labels do not match the site's rows"));
    }
    if rows.len() < 2 * m {
        return Err(Error::InvalidFoldCount {
            folds: m,
            min_site: rows.len(),
        });
    }
    if labels.iter().any(|&f| f >= m) {
        return Err(Error::invalid(format!("fold label out of range at site {site}")));
    }
    Ok(())
}

fn site_seed(seed: &SeedStream, site: usize, fold: usize) -> SeedStream {
    seed.child("nuisance").index(site as u64).index(fold as u64)
}

/// Cross-fits the target site's own nuisances and fits the full-sample
/// outcome model that source sites use for their predictions.
pub fn fit_target_site(
    rows: &[&Observation],
    labels: &[usize],
    grid: &Arc<TimeGrid>,
    cfg: &NuisanceConfig,
    seed: &SeedStream,
) -> Result<(SiteNuisance, SurvivalModel)> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyTarget);
    }
    check_labels(rows, labels, cfg.folds, 0)?;
    let mut nu = SiteNuisance::new(grid, rows.len());
    for m in 0..cfg.folds {
        let train: Vec<&Observation> = rows.iter().zip(labels).filter(|(_, &f)| f != m).map(|(o, _)| *o).collect();
        let which: Vec<usize> = (0..rows.len()).filter(|&r| labels[r] == m).collect();
        let label = format!("site 0 fold {m}");
        let (s, g, pi) = fit_models(&train, grid, cfg, &site_seed(seed, 0, m), &mut nu.notes, &label, true)?;
        predict_rows(&mut nu, rows, &which, s.as_ref(), &g, &pi)?;
        let origin = Origin::fold(Scope::Site(0), m);
        for &r in &which {
            nu.provenance[r] = Provenance {
                outcome: origin,
                censoring: origin,
                propensity: origin,
                ratio: None,
                site_propensity: None,
            };
        }
    }
    for (r, o) in rows.iter().enumerate() {
        finalize_row(&mut nu, r, o, cfg.eta_cap);
    }
    let full = fit_survival_ensemble(
        rows,
        Outcome::Event,
        grid,
        &cfg.candidates,
        cfg.cv_folds,
        &seed.child("nuisance").child("target-full"),
    )?;
    Ok((nu, full.model))
}

/// What a source site knows about the target covariates.
#[derive(Debug, Clone, Copy)]
pub enum TargetCovariates<'a> {
    Rows(&'a [&'a [f64]]),
    Summary(&'a SiteCovariateSummary),
}

/// Nuisances for one source site: own-site censoring and propensity models,
/// density ratio to the target, and the target outcome model's predictions.
pub fn fit_source_site(
    site: usize,
    rows: &[&Observation],
    labels: &[usize],
    target_model: &SurvivalModel,
    target_x: TargetCovariates<'_>,
    grid: &Arc<TimeGrid>,
    cfg: &NuisanceConfig,
    seed: &SeedStream,
) -> Result<SiteNuisance> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptySite(site));
    }
    check_labels(rows, labels, cfg.folds, site)?;
    let mut nu = SiteNuisance::new(grid, rows.len());
    let all: Vec<usize> = (0..rows.len()).collect();
    let l = grid.len();
    for &r in &all {
        let span = r * l..(r + 1) * l;
        target_model.survival_into(&rows[r].x, 0, &mut nu.surv[0][span.clone()])?;
        target_model.survival_into(&rows[r].x, 1, &mut nu.surv[1][span])?;
    }
    for m in 0..cfg.folds {
        let train: Vec<&Observation> = rows.iter().zip(labels).filter(|(_, &f)| f != m).map(|(o, _)| *o).collect();
        let which: Vec<usize> = (0..rows.len()).filter(|&r| labels[r] == m).collect();
        let label = format!("site {site} fold {m}");
        let fseed = site_seed(seed, site, m);
        let (_, g, pi) = fit_models(&train, grid, cfg, &fseed, &mut nu.notes, &label, false)?;
        predict_rows(&mut nu, rows, &which, None, &g, &pi)?;
        let train_x: Vec<&[f64]> = train.iter().map(|o| o.x.as_slice()).collect();
        let ratio = match target_x {
            TargetCovariates::Rows(t) => fit_density_ratio_pooled(t, &train_x, cfg.eta_cap)?,
            TargetCovariates::Summary(t) => {
                let s = SiteCovariateSummary::from_rows(site, &train_x)?;
                match fit_density_ratio_coarse(t, &s, cfg.eta_cap) {
                    Ok(r) => r,
                    Err(Error::CoarseRatioFailure(msg)) => {
                        log::warn!("{label}: {msg}; using a unit density ratio");
                        nu.notes.push(format!("{label}: coarse density ratio failed, omega = 1"));
                        RatioModel::identity(train_x[0].len(), cfg.eta_cap)
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let origin = Origin::fold(Scope::Site(site), m);
        for &r in &which {
            let raw = ratio.raw(&rows[r].x);
            nu.omega[r] = ratio.eval(&rows[r].x);
            nu.clip.checked += 1;
            if raw != nu.omega[r] {
                nu.clip.ratio += 1;
            }
            nu.provenance[r] = Provenance {
                outcome: Origin {
                    scope: Scope::Site(0),
                    held_out: None,
                },
                censoring: origin,
                propensity: origin,
                ratio: Some(origin),
                site_propensity: None,
            };
        }
    }
    for (r, o) in rows.iter().enumerate() {
        finalize_row(&mut nu, r, o, cfg.eta_cap);
    }
    Ok(nu)
}

/// Out-of-fold nuisance predictions for every row of a dataset.
#[derive(Debug, Clone)]
pub struct NuisanceBundle {
    pub mode: BundleMode,
    pub grid: Arc<TimeGrid>,
    pub n_sites: usize,
    pub site_counts: Vec<usize>,
    pub site: Vec<usize>,
    pub fold_of: Vec<usize>,
    pub a: Vec<u8>,
    pub delta: Vec<u8>,
    /// Grid index of each observed time (see [`TimeGrid::interval_index`]).
    pub y_index: Vec<usize>,
    pub surv: [Vec<f64>; 2],
    pub cens: Vec<f64>,
    pub pi1: Vec<f64>,
    /// Density ratio to the target (federated mode with sources).
    pub omega: Option<Vec<f64>>,
    /// Target-membership probability `P(R = 0 | X)` (CCOD mode).
    pub q: Option<Vec<f64>>,
    pub clip: ClipCounts,
    pub provenance: Vec<Provenance>,
    pub notes: Vec<String>,
    /// Outcome model trained on the full target sample (federated mode).
    pub target_model: Option<SurvivalModel>,
}

impl NuisanceBundle {
    pub fn len(&self) -> usize {
        self.site.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site.is_empty()
    }

    pub fn surv_row(&self, a: u8, i: usize) -> &[f64] {
        let l = self.grid.len();
        &self.surv[a as usize][i * l..(i + 1) * l]
    }

    pub fn cens_row(&self, i: usize) -> &[f64] {
        let l = self.grid.len();
        &self.cens[i * l..(i + 1) * l]
    }

    /// `P(A = a | X_i)` at the row's own site (or pooled, in CCOD mode).
    pub fn propensity(&self, a: u8, i: usize) -> f64 {
        if a == 1 {
            self.pi1[i]
        } else {
            1.0 - self.pi1[i]
        }
    }

    /// Rows whose predictions came from a model that saw their own fold.
    pub fn audit(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.provenance[i].is_cross_fitted(self.site[i], self.fold_of[i]))
            .collect()
    }

    /// A bundle over `data` with placeholder predictions (`S = G = 1`,
    /// `pi = 1/2`, unit ratios when there are sources) for callers that
    /// supply known nuisance functions themselves.
    pub fn blank(data: &Dataset, grid: &Arc<TimeGrid>, mode: BundleMode) -> Self {
        let mut b = Self::skeleton(data, &vec![0; data.len()], grid, mode);
        if data.n_sites() > 1 {
            match mode {
                BundleMode::Federated => b.omega = Some(vec![1.0; data.len()]),
                BundleMode::Ccod => b.q = Some(vec![1.0; data.len()]),
            }
        }
        b
    }

    fn skeleton(data: &Dataset, fold_of: &[usize], grid: &Arc<TimeGrid>, mode: BundleMode) -> Self {
        let n = data.len();
        let l = grid.len();
        let origin = Origin::fold(Scope::Pooled, 0);
        NuisanceBundle {
            mode,
            grid: grid.clone(),
            n_sites: data.n_sites(),
            site_counts: data.site_counts(),
            site: data.sites(),
            fold_of: fold_of.to_vec(),
            a: data.obs().iter().map(|o| o.a).collect(),
            delta: data.obs().iter().map(|o| o.delta).collect(),
            y_index: data.obs().iter().map(|o| grid.interval_index(o.y)).collect(),
            surv: [vec![1.0; n * l], vec![1.0; n * l]],
            cens: vec![1.0; n * l],
            pi1: vec![0.5; n],
            omega: None,
            q: None,
            clip: ClipCounts::default(),
            provenance: vec![
                Provenance {
                    outcome: origin,
                    censoring: origin,
                    propensity: origin,
                    ratio: None,
                    site_propensity: None,
                };
                n
            ],
            notes: Vec::new(),
            target_model: None,
        }
    }

    /// Copies one site's predictions into dataset order.
    pub fn scatter(&mut self, rows: &[usize], nu: &SiteNuisance) {
        let l = self.grid.len();
        for (r, &i) in rows.iter().enumerate() {
            for a in 0..2 {
                self.surv[a][i * l..(i + 1) * l].copy_from_slice(&nu.surv[a][r * l..(r + 1) * l]);
            }
            self.cens[i * l..(i + 1) * l].copy_from_slice(&nu.cens[r * l..(r + 1) * l]);
            self.pi1[i] = nu.pi1[r];
            if let Some(w) = self.omega.as_mut() {
                w[i] = nu.omega[r];
            }
            self.provenance[i] = nu.provenance[r];
        }
        self.clip.add(&nu.clip);
        self.notes.extend(nu.notes.iter().cloned());
    }
}

/// Builds the cross-fitted bundle for `mode`. Federated mode needs the
/// target site to be non-empty; CCOD mode requires pooled sharing.
pub fn build_nuisance_bundle(
    data: &Dataset,
    folds: &FoldAssignment,
    grid: &Arc<TimeGrid>,
    mode: BundleMode,
    cfg: &NuisanceConfig,
    seed: &SeedStream,
) -> Result<NuisanceBundle> {
    cfg.validate()?;
    if folds.folds() != cfg.folds || folds.fold_of().len() != data.len() {
        return Err(Error::invalid("fold assignment does not match the data or configuration"));
    }
    let counts = data.site_counts();
    if counts[0] == 0 {
        return Err(Error::EmptyTarget);
    }
    match mode {
        BundleMode::Federated => build_federated(data, folds, grid, cfg, seed),
        BundleMode::Ccod => {
            if cfg.sharing != Sharing::Pooled {
                return Err(Error::invalid("the CCOD estimator requires pooled sharing"));
            }
            build_ccod(data, folds, grid, cfg, seed)
        }
    }
}

fn site_rows(data: &Dataset, site: usize) -> (Vec<usize>, Vec<&Observation>) {
    let idx = data.site_indices(site);
    let rows = idx.iter().map(|&i| &data.obs()[i]).collect();
    (idx, rows)
}

fn build_federated(
    data: &Dataset,
    folds: &FoldAssignment,
    grid: &Arc<TimeGrid>,
    cfg: &NuisanceConfig,
    seed: &SeedStream,
) -> Result<NuisanceBundle> {
    let mut bundle = NuisanceBundle::skeleton(data, folds.fold_of(), grid, BundleMode::Federated);
    let (t_idx, t_rows) = site_rows(data, 0);
    let t_labels: Vec<usize> = t_idx.iter().map(|&i| folds.fold_of()[i]).collect();
    let (t_nu, model) = fit_target_site(&t_rows, &t_labels, grid, cfg, seed)?;
    let sources: Vec<usize> = (1..data.n_sites()).filter(|&k| counts_nonzero(data, k)).collect();
    if !sources.is_empty() {
        bundle.omega = Some(vec![1.0; data.len()]);
    }
    bundle.scatter(&t_idx, &t_nu);
    let t_x: Vec<&[f64]> = t_rows.iter().map(|o| o.x.as_slice()).collect();
    let summary = SiteCovariateSummary::from_rows(0, &t_x)?;
    for k in sources {
        let (idx, rows) = site_rows(data, k);
        let labels: Vec<usize> = idx.iter().map(|&i| folds.fold_of()[i]).collect();
        let target = match cfg.sharing {
            Sharing::Pooled => TargetCovariates::Rows(&t_x),
            Sharing::CoarseOnly => TargetCovariates::Summary(&summary),
        };
        let nu = fit_source_site(k, &rows, &labels, &model, target, grid, cfg, seed)?;
        bundle.scatter(&idx, &nu);
    }
    bundle.target_model = Some(model);
    Ok(bundle)
}

fn counts_nonzero(data: &Dataset, k: usize) -> bool {
    data.obs().iter().any(|o| o.site == k)
}

fn build_ccod(
    data: &Dataset,
    folds: &FoldAssignment,
    grid: &Arc<TimeGrid>,
    cfg: &NuisanceConfig,
    seed: &SeedStream,
) -> Result<NuisanceBundle> {
    let mut bundle = NuisanceBundle::skeleton(data, folds.fold_of(), grid, BundleMode::Ccod);
    let rows: Vec<&Observation> = data.obs().iter().collect();
    let mut nu = SiteNuisance::new(grid, rows.len());
    let multi = data.n_sites() > 1;
    let mut q = vec![1.0; rows.len()];
    for m in 0..cfg.folds {
        let train: Vec<&Observation> = rows
            .iter()
            .zip(folds.fold_of())
            .filter(|(_, &f)| f != m)
            .map(|(o, _)| *o)
            .collect();
        let which: Vec<usize> = (0..rows.len()).filter(|&i| folds.fold_of()[i] == m).collect();
        let label = format!("pooled fold {m}");
        // Same stream as the target site so a single-site run reproduces it.
        let (s, g, pi) = fit_models(&train, grid, cfg, &site_seed(seed, 0, m), &mut nu.notes, &label, true)?;
        predict_rows(&mut nu, &rows, &which, s.as_ref(), &g, &pi)?;
        let origin = Origin::fold(Scope::Pooled, m);
        let q_model = if multi {
            let x: Vec<&[f64]> = train.iter().map(|o| o.x.as_slice()).collect();
            let r: Vec<bool> = train.iter().map(|o| o.site == 0).collect();
            Some(fit_binary(&x, &r, cfg.cv_folds, &seed.child("site-propensity").index(m as u64))?)
        } else {
            None
        };
        for &i in &which {
            if let Some(qm) = &q_model {
                q[i] = qm.model.prob(&rows[i].x);
                nu.clip.checked += 1;
                if clip_count(&mut q[i], 1.0 / cfg.eta_cap, 1.0) {
                    nu.clip.site_propensity += 1;
                }
            }
            nu.provenance[i] = Provenance {
                outcome: origin,
                censoring: origin,
                propensity: origin,
                ratio: None,
                site_propensity: q_model.as_ref().map(|_| origin),
            };
        }
    }
    for (r, o) in rows.iter().enumerate() {
        finalize_row(&mut nu, r, o, cfg.eta_cap);
    }
    let all: Vec<usize> = (0..rows.len()).collect();
    bundle.scatter(&all, &nu);
    bundle.q = Some(q);
    Ok(bundle)
}
