//! Sequential selection among arms whose Gaussian payoffs are correlated.
//!
//! The crate covers the belief model ([`belief`]), exact two-step planning
//! ([`planner`]), online policies ([`policies`]), payoff environments
//! ([`env`]) and a reproducible experiment harness ([`harness`]).

pub mod belief;
pub mod env;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod planner;
pub mod policies;

pub use belief::{correlated_update, predictive, replay, self_update, BeliefState, History, UpdateMode};
pub use error::{Error, ErrorClass, Result};
pub use gaussian::{GaussianParams, Interval, SeedRng};
pub use harness::{compare_policies, run_experiment, ComparisonTable, EnvSpec, ExperimentConfig, RunResult};
pub use planner::{ObservationDensity, TwoStepPolicy};
pub use policies::{PolicyKind, ViCorConfig};
