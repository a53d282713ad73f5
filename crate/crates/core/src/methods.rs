//! Uniform entry point over the three estimators.

use rand::Rng;
use serde::Serialize;

use crate::baselines::{estimate_ate_aipw, estimate_ate_arb, BaselineEstimate};
use crate::data::Dataset;
use crate::error::Result;
use crate::estimator::{estimate_ate_sdr, EstimatorConfig, Method, SdrEstimate};

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum AteEstimate {
    Sdr(SdrEstimate),
    Baseline(BaselineEstimate),
}

impl AteEstimate {
    pub fn method(&self) -> Method {
        match self {
            AteEstimate::Sdr(e) => e.method,
            AteEstimate::Baseline(e) => e.method,
        }
    }

    pub fn tau_hat(&self) -> f64 {
        match self {
            AteEstimate::Sdr(e) => e.tau_hat,
            AteEstimate::Baseline(e) => e.tau_hat,
        }
    }

    pub fn v_hat(&self) -> Option<f64> {
        match self {
            AteEstimate::Sdr(e) => Some(e.v_hat),
            AteEstimate::Baseline(e) => e.v_hat,
        }
    }

    pub fn interval(&self) -> Option<(f64, f64)> {
        match self {
            AteEstimate::Sdr(e) => Some((e.ci_lower, e.ci_upper)),
            AteEstimate::Baseline(e) => e.ci_lower.zip(e.ci_upper),
        }
    }

    pub fn covers(&self, tau: f64) -> Option<bool> {
        self.interval().map(|(lo, hi)| lo <= tau && tau <= hi)
    }

    pub fn converged(&self) -> bool {
        match self {
            AteEstimate::Sdr(e) => e.diagnostics.converged(),
            AteEstimate::Baseline(e) => e.diagnostics.converged(),
        }
    }

    pub fn clamp_count(&self) -> usize {
        match self {
            AteEstimate::Sdr(e) => e.diagnostics.clamp_count,
            AteEstimate::Baseline(e) => e.diagnostics.clamp_count,
        }
    }

    pub fn resplits(&self) -> usize {
        match self {
            AteEstimate::Sdr(e) => e.diagnostics.resplits,
            AteEstimate::Baseline(e) => e.diagnostics.resplits,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            AteEstimate::Sdr(e) => &e.diagnostics.warnings,
            AteEstimate::Baseline(e) => &e.diagnostics.warnings,
        }
    }
}

/// Runs `method` on `data`. The random stream drives the fold split; ARB
/// does not split and ignores it.
pub fn estimate_ate<R: Rng + ?Sized>(
    method: Method,
    data: &Dataset,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<AteEstimate> {
    Ok(match method {
        Method::Sdr => AteEstimate::Sdr(estimate_ate_sdr(data, cfg, rng)?.0),
        Method::Aipw => AteEstimate::Baseline(estimate_ate_aipw(data, cfg, rng)?),
        Method::Arb => AteEstimate::Baseline(estimate_ate_arb(data, cfg)?),
    })
}
