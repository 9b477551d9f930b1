//! Federated weighting of the site-specific estimators: the penalized
//! quadratic objective, its simplex solver, penalty cross-validation, the
//! bootstrap-averaged variant, and the aggregated estimator with its
//! plug-in variance.

pub mod cell;
pub mod curve;
pub mod solver;
pub mod stats;
pub mod weights;

pub use cell::{bootstrap_weights, cv_labels, CellData, Resampling, SourceCell, TargetCell};
pub use curve::{cells_from_table, fed_curve, fed_estimate, FedCurveEstimate, FedPoint, WeightMethod};
pub use solver::{fw_gap, project_simplex, solve_simplex, SimplexSolution};
pub use stats::{fed_variance, quadratic, residual_score, CellSums, Centering, Moments, Quadratic, TargetSums};
pub use weights::{
    choose_lambda, default_lambda_grid, solve_weights, solve_weights_bootstrap, FedConfig, LambdaChoice,
    WeightSolution,
};
