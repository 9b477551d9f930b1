//! Causal survival estimation for a target site using data from several
//! source sites, with a federated, discrepancy-penalized weighting of the
//! site-specific estimators.

pub mod eif;
pub mod error;
pub mod fednet;
pub mod fedopt;
pub mod nuisance;
pub mod seed;
pub mod simbench;
pub mod survival;

pub use error::{Error, Result};
pub use seed::SeedStream;
pub use survival::{CurveKind, Dataset, Observation, Outcome, StepCurve, TimeGrid};
