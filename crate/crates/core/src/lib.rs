//! Sparsity double robust (SDR) estimation of average treatment effects
//! with high-dimensional covariates.
//!
//! The estimator pairs an l1-penalized covariate-balancing propensity fit
//! with a propensity-weighted outcome lasso, cross-fitted over two folds.
//! Cross-fitted AIPW and approximate residual balancing are provided as
//! comparators, along with a simulator and a Monte Carlo harness.

pub mod baselines;
pub mod bench;
pub mod data;
pub mod error;
pub mod estimator;
pub mod methods;
pub mod rng;
pub mod simulate;
pub mod solvers;

pub use data::{load_dataset, save_dataset, split_halves, Dataset, FoldId, FoldSplit};
pub use error::{Result, SdrError};
pub use baselines::{estimate_ate_aipw, estimate_ate_arb, BaselineEstimate};
pub use estimator::{estimate_ate_sdr, EstimatorConfig, Method, SdrConfig, SdrEstimate};
pub use methods::{estimate_ate, AteEstimate};
pub use simulate::{simulate, ScenarioConfig, TrueParams};
pub use solvers::SolverConfig;
