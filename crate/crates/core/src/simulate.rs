//! Synthetic data: AR(1) Gaussian covariates, sparse logistic treatment
//! assignment and sparse linear potential outcomes with centered chi-square
//! errors (optionally heteroskedastic in the treated arm).

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SdrError};
use crate::rng::{StreamKey, StreamTag};

/// Variance of the homoskedastic error, `Var(Z^2 - 1)`.
pub const NOISE_VARIANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub s_theta: usize,
    pub s_beta: usize,
    #[serde(default = "default_r_squared")]
    pub r_squared: f64,
    #[serde(default)]
    pub heteroskedastic: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_rho() -> f64 {
    0.6
}

fn default_r_squared() -> f64 {
    0.5
}

impl ScenarioConfig {
    /// The n = 500, p = 600, rho = 0.6 design with both supports of size 2.
    pub fn baseline() -> Self {
        Self {
            n: 500,
            p: 600,
            rho: 0.6,
            s_theta: 2,
            s_beta: 2,
            r_squared: 0.5,
            heteroskedastic: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < crate::data::MIN_OBSERVATIONS {
            return Err(SdrError::invalid(format!("n = {} is too small", self.n)));
        }
        if self.p == 0 {
            return Err(SdrError::invalid("p must be positive"));
        }
        check_rho(self.rho)?;
        check_support(self.p, self.s_theta, "s_theta")?;
        check_support(self.p, self.s_beta, "s_beta")?;
        check_r_squared(self.r_squared)
    }
}

/// Population parameters behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub theta: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta0: Vec<f64>,
    pub tau_true: f64,
    pub a_theta: f64,
    pub a_beta: f64,
}

impl TrueParams {
    pub fn build(p: usize, rho: f64, s_theta: usize, s_beta: usize, r_squared: f64) -> Result<Self> {
        let (theta, a_theta) = make_theta(p, s_theta, rho)?;
        let (beta1, beta0, a_beta) = make_beta(p, s_beta, rho, r_squared)?;
        Ok(Self {
            theta: theta.to_vec(),
            beta1: beta1.to_vec(),
            beta0: beta0.to_vec(),
            tau_true: 0.0,
            a_theta,
            a_beta,
        })
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        return Err(SdrError::invalid(format!("AR(1) correlation must satisfy |rho| < 1, got {rho}")));
    }
    Ok(())
}

fn check_support(p: usize, s: usize, name: &str) -> Result<()> {
    if s == 0 {
        return Err(SdrError::invalid(format!("{name} must be at least 1")));
    }
    if 2 * s - 1 > p {
        return Err(SdrError::invalid(format!(
            "{name} = {s} needs {} coordinates but p = {p}",
            2 * s - 1
        )));
    }
    Ok(())
}

fn check_r_squared(r2: f64) -> Result<()> {
    if !(r2 > 0.0 && r2 < 1.0) {
        return Err(SdrError::invalid(format!("r_squared must lie in (0, 1), got {r2}")));
    }
    Ok(())
}

/// One draw from N(0, Sigma) with `Sigma_ij = rho^|i-j|`.
pub fn ar1_sample<R: Rng + ?Sized>(p: usize, rho: f64, rng: &mut R) -> Result<Array1<f64>> {
    check_rho(rho)?;
    let mut row = Array1::zeros(p);
    fill_ar1(row.as_slice_mut().unwrap(), rho, rng);
    Ok(row)
}

fn fill_ar1<R: Rng + ?Sized>(row: &mut [f64], rho: f64, rng: &mut R) {
    let innovation = (1.0 - rho * rho).sqrt();
    let mut prev = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *v = if j == 0 { z } else { rho * prev + innovation * z };
        prev = *v;
    }
}

/// `a' Sigma a` for the unit pattern on 0-based indices 0, 2, ..., 2(s-1).
fn odd_pattern_quadratic_form(s: usize, rho: f64) -> f64 {
    let r2 = rho * rho;
    let mut total = s as f64;
    let mut power = 1.0;
    for d in 1..s {
        power *= r2;
        total += 2.0 * (s - d) as f64 * power;
    }
    total
}

fn odd_pattern(p: usize, s: usize, amplitude: f64) -> Array1<f64> {
    let mut v = Array1::zeros(p);
    for k in 0..s {
        v[2 * k] = amplitude;
    }
    v
}

/// Propensity coefficients scaled so that `theta' Sigma theta = 1`.
pub fn make_theta(p: usize, s_theta: usize, rho: f64) -> Result<(Array1<f64>, f64)> {
    check_rho(rho)?;
    check_support(p, s_theta, "s_theta")?;
    let a = odd_pattern_quadratic_form(s_theta, rho).powf(-0.5);
    Ok((odd_pattern(p, s_theta, a), a))
}

/// Outcome coefficients with `beta1' Sigma beta1 = 2 R^2 / (1 - R^2)` and
/// `beta0 = -beta1`.
pub fn make_beta(
    p: usize,
    s_beta: usize,
    rho: f64,
    r_squared: f64,
) -> Result<(Array1<f64>, Array1<f64>, f64)> {
    check_rho(rho)?;
    check_support(p, s_beta, "s_beta")?;
    check_r_squared(r_squared)?;
    let signal = NOISE_VARIANCE * r_squared / (1.0 - r_squared);
    let a = (signal / odd_pattern_quadratic_form(s_beta, rho)).sqrt();
    let beta1 = odd_pattern(p, s_beta, a);
    let beta0 = -&beta1;
    Ok((beta1, beta0, a))
}

pub fn simulate(config: &ScenarioConfig) -> Result<(Dataset, TrueParams)> {
    simulate_replication(config, 0)
}

/// Replication `rep` of a scenario; streams are keyed on `(config.seed, rep)`.
pub fn simulate_replication(config: &ScenarioConfig, rep: u64) -> Result<(Dataset, TrueParams)> {
    config.validate()?;
    let truth = TrueParams::build(config.p, config.rho, config.s_theta, config.s_beta, config.r_squared)?;
    let data = draw_dataset(config, &truth, StreamKey::new(config.seed, rep))?;
    Ok((data, truth))
}

/// Draw a sample of size `config.n` from the model defined by `truth`.
pub fn draw_dataset(config: &ScenarioConfig, truth: &TrueParams, key: StreamKey) -> Result<Dataset> {
    let (n, p) = (config.n, config.p);
    let mut x = Array2::zeros((n, p));
    let mut cov_rng = key.rng(StreamTag::Covariates);
    for mut row in x.rows_mut() {
        fill_ar1(row.as_slice_mut().unwrap(), config.rho, &mut cov_rng);
    }

    let theta = Array1::from(truth.theta.clone());
    let beta1 = Array1::from(truth.beta1.clone());
    let beta0 = Array1::from(truth.beta0.clone());
    let index = x.dot(&theta);

    let mut treat_rng = key.rng(StreamTag::Treatment);
    let mut noise_rng = key.rng(StreamTag::OutcomeNoise);
    let mut w = Vec::with_capacity(n);
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let e = logistic(index[i]);
        let u: f64 = treat_rng.random();
        let wi = u8::from(u < e);
        let xi = x.row(i);
        let (eps1, eps0) = draw_errors(e, config.heteroskedastic, &mut noise_rng);
        y[i] = if wi == 1 {
            xi.dot(&beta1) + eps1
        } else {
            xi.dot(&beta0) + eps0
        };
        w.push(wi);
    }
    Dataset::new(x, y, w)
}

/// Both potential-outcome errors are drawn for every unit so that the
/// stream position does not depend on the realized treatment.
fn draw_errors<R: Rng + ?Sized>(propensity: f64, heteroskedastic: bool, rng: &mut R) -> (f64, f64) {
    let xi1 = centered_chi2(rng);
    let xi0 = centered_chi2(rng);
    let scale = if heteroskedastic { hetero_scale(propensity) } else { 1.0 };
    (scale * xi1, xi0)
}

/// Treated-arm error scale in the heteroskedastic design.
pub fn hetero_scale(propensity: f64) -> f64 {
    if propensity <= 0.5 {
        4.0
    } else {
        1.0
    }
}

fn centered_chi2<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * z - 1.0
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
