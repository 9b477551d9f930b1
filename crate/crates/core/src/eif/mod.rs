//! Efficient influence functions: the `H` residual, per-observation EIF
//! tables, point estimates and plug-in variances.

pub mod hfunc;
pub mod table;
pub mod variance;

pub use hfunc::{discrete_cumhaz, h_functional, h_process, h_process_with_hazard};
pub use table::{augmentation_row, EstimatorId, InfluenceTable};
pub use variance::{EstimateWithCI, Z_95};
