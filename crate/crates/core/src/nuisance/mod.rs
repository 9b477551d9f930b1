//! Cross-fitted nuisance models: outcome and censoring survival, treatment
//! propensity, site membership and density ratios.

pub mod bundle;
pub mod ensemble;
pub mod folds;
pub mod logistic;
pub mod propensity;
pub mod ratio;

pub use bundle::{
    build_nuisance_bundle, fit_source_site, fit_target_site, BundleMode, ClipCounts, NuisanceBundle, NuisanceConfig,
    Sharing, SiteNuisance, TargetCovariates,
};
pub use ensemble::{fit_survival_ensemble, Candidate, EnsembleFit, ModelParams, SurvivalModel, ALL_CANDIDATES};
pub use folds::{make_folds, site_fold_labels, FoldAssignment};
pub use logistic::LogisticModel;
pub use propensity::{fit_binary, BinaryModel};
pub use ratio::{fit_density_ratio_coarse, fit_density_ratio_pooled, RatioModel, SiteCovariateSummary};
