//! Simulation study: data generation under site shifts, ground truth,
//! competitor estimators and Monte Carlo summaries.

pub mod competitors;
pub mod dgp;
pub mod montecarlo;
pub mod scenario;
pub mod truth;

pub use competitors::{ivw_combine, run_competitors, CompetitorConfig, CompetitorResults, Method, MethodCurve};
pub use dgp::{gen_dataset, gen_site};
pub use montecarlo::{monte_carlo, monte_carlo_until, summarize, MetricsReport, MonteCarloConfig, Record, Summary};
pub use scenario::{Knobs, Scenario, ScenarioSpec};
pub use truth::{truth_oracle, TruthCurve};
