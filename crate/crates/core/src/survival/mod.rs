//! Survival calculus on a fixed time grid.

pub mod cox;
pub mod data;
pub mod grid;
pub mod isotonic;
pub mod km;

pub use cox::{cox_fit, cox_partial_loglik, predict_conditional_survival, CoxModel};
pub use data::{Dataset, Observation, Outcome};
pub use grid::{CurveKind, StepCurve, TimeGrid};
pub use isotonic::{isotonic_correct, pava_decreasing};
pub use km::{km_fit, nelson_aalen_fit, product_integral};
