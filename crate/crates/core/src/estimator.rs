//! Cross-fitted SDR estimator of the average treatment effect.
//!
//! For each arm `w` and fold `F` the propensity coefficients are fitted on
//! `F` with the balancing loss, then the outcome lasso is fitted on `F` with
//! weights `1{W = w} exp(-X'theta)`. The fold mean
//!
//! `mu_{w,F} = (1/|F|) sum_{i in F} [X_i'beta_{w,F^c} + q(X_i'theta_{w,F}) 1{W_i = w} (Y_i - X_i'beta_{w,F^c})]`
//!
//! combines in-fold propensity weights with the outcome fit from the other
//! fold, and `tau = mean_F (mu_{1,F} - mu_{0,F})`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{split_halves, Dataset, FoldId, FoldSplit};
use crate::error::{Result, SdrError};
use crate::simulate::TrueParams;
use crate::solvers::{fit_propensity, fit_weighted_lasso, ArbConfig, OutcomeFit, PropensityFit, SolverConfig};

/// Exponents of `exp(-x'theta)` are clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sdr,
    Aipw,
    Arb,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sdr, Method::Aipw, Method::Arb];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sdr => "sdr",
            Method::Aipw => "aipw",
            Method::Arb => "arb",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdr" => Ok(Method::Sdr),
            "aipw" => Ok(Method::Aipw),
            "arb" => Ok(Method::Arb),
            other => Err(SdrError::invalid(format!("unknown method {other:?}, expected sdr, aipw or arb"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Nuisances averaged over the two folds, evaluated on all units.
    #[default]
    FoldAveraged,
    /// Each unit uses the nuisances that entered its own fold mean.
    PerFold,
}

/// Settings shared by the SDR estimator and the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub solver: SolverConfig,
    /// Confidence level of the reported interval.
    pub level: f64,
    pub variance: VarianceMode,
    /// Fold re-draws allowed when an arm is missing from a fold.
    pub max_resplits: usize,
    /// AIPW propensity clamp `eta`: estimates are kept in `[eta, 1 - eta]`.
    pub propensity_clamp: f64,
    pub arb: ArbConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            level: 0.95,
            variance: VarianceMode::FoldAveraged,
            max_resplits: 10,
            propensity_clamp: 0.01,
            arb: ArbConfig::default(),
        }
    }
}

pub type SdrConfig = EstimatorConfig;

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(SdrError::invalid(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.max_resplits == 0 {
            return Err(SdrError::invalid("max_resplits must be at least 1"));
        }
        if !(self.propensity_clamp > 0.0 && self.propensity_clamp < 0.5) {
            return Err(SdrError::invalid(format!(
                "propensity_clamp must lie in (0, 0.5), got {}",
                self.propensity_clamp
            )));
        }
        if !(self.arb.ridge > 0.0 && self.arb.ridge.is_finite()) {
            return Err(SdrError::invalid("arb.ridge must be positive"));
        }
        Ok(())
    }
}

/// `exp(-z)` with the exponent clamped; bumps `clamps` when clamping bites.
pub fn clamped_exp_neg(z: f64, clamps: &mut usize) -> f64 {
    if z.abs() > EXP_CLAMP {
        *clamps += 1;
    }
    (-z.clamp(-EXP_CLAMP, EXP_CLAMP)).exp()
}

/// Inverse-propensity weights `q(x'theta) = 1 + exp(-x'theta)`.
#[derive(Debug, Clone)]
pub struct GammaWeights {
    pub weights: Array1<f64>,
    pub clamp_count: usize,
}

pub fn gamma_weights(x: ArrayView2<'_, f64>, theta: ArrayView1<'_, f64>) -> GammaWeights {
    let mut clamp_count = 0;
    let weights = x.dot(&theta).mapv(|z| 1.0 + clamped_exp_neg(z, &mut clamp_count));
    GammaWeights { weights, clamp_count }
}

/// A value tagged with the fold it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedOn<T> {
    fold: FoldId,
    value: T,
}

impl<T> TrainedOn<T> {
    pub fn new(fold: FoldId, value: T) -> Self {
        Self { fold, value }
    }

    pub fn fold(&self) -> FoldId {
        self.fold
    }

    pub fn value(&self) -> &T {
        &self.value
    }
}

/// The nuisances entering `mu_{w,F}`: propensity from `F`, outcome from
/// the complement. Construction fails for any other orientation.
#[derive(Debug, Clone)]
pub struct CrossFitPair {
    fold: FoldId,
    theta: TrainedOn<Array1<f64>>,
    beta: TrainedOn<Array1<f64>>,
}

impl CrossFitPair {
    pub fn new(fold: FoldId, theta: TrainedOn<Array1<f64>>, beta: TrainedOn<Array1<f64>>) -> Result<Self> {
        if theta.fold != fold {
            return Err(SdrError::invalid(format!(
                "propensity for fold {fold:?} must be trained on that fold, got {:?}",
                theta.fold
            )));
        }
        if beta.fold != fold.other() {
            return Err(SdrError::invalid(format!(
                "outcome fit for fold {fold:?} must be trained on fold {:?}, got {:?}",
                fold.other(),
                beta.fold
            )));
        }
        if theta.value.len() != beta.value.len() {
            return Err(SdrError::invalid("propensity and outcome coefficients differ in length"));
        }
        Ok(Self { fold, theta, beta })
    }

    pub fn fold(&self) -> FoldId {
        self.fold
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FoldMean {
    pub mu: f64,
    pub clamp_count: usize,
}

/// `mu_{w,F}` for the fold named by `pair`.
pub fn mu_hat_fold(data: &Dataset, split: &FoldSplit, arm: u8, pair: &CrossFitPair) -> Result<FoldMean> {
    let rows = split.fold(pair.fold);
    if rows.is_empty() {
        return Err(SdrError::invalid("cannot average over an empty fold"));
    }
    if pair.theta.value.len() != data.p() {
        return Err(SdrError::invalid("coefficient length does not match the dataset"));
    }
    let fold = data.subset(rows);
    let gamma = gamma_weights(fold.x.view(), pair.theta.value.view());
    let fitted = fold.x.dot(&pair.beta.value);
    let mut total = 0.0;
    for i in 0..fold.len() {
        let correction = if fold.w[i] == arm {
            gamma.weights[i] * (fold.y[i] - fitted[i])
        } else {
            0.0
        };
        total += fitted[i] + correction;
    }
    Ok(FoldMean {
        mu: total / fold.len() as f64,
        clamp_count: gamma.clamp_count,
    })
}

/// Nuisance fits indexed `[arm][fold]`, each trained on that fold.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub split: FoldSplit,
    pub propensity: [[PropensityFit; 2]; 2],
    pub outcome: [[OutcomeFit; 2]; 2],
    /// Clamped exponents in the outcome-lasso weights.
    pub weight_clamp_count: usize,
    /// Fold draws rejected because an arm was missing.
    pub resplits: usize,
}

impl NuisanceFit {
    pub fn pair(&self, arm: u8, fold: FoldId) -> Result<CrossFitPair> {
        let a = usize::from(arm);
        CrossFitPair::new(
            fold,
            TrainedOn::new(fold, self.propensity[a][fold.index()].theta()),
            TrainedOn::new(fold.other(), self.outcome[a][fold.other().index()].beta()),
        )
    }

    /// Coefficients averaged over the two folds.
    pub fn averaged(&self) -> ArmParams {
        let avg = |a: &[f64], b: &[f64]| Array1::from_iter(a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)));
        let theta = |arm: usize| avg(&self.propensity[arm][0].theta, &self.propensity[arm][1].theta);
        let beta = |arm: usize| avg(&self.outcome[arm][0].beta, &self.outcome[arm][1].beta);
        ArmParams {
            theta1: theta(1),
            theta0: theta(0),
            beta1: beta(1),
            beta0: beta(0),
        }
    }

    /// Parameters that enter the fold mean of `fold`.
    pub fn cross_fitted(&self, fold: FoldId) -> ArmParams {
        let (f, g) = (fold.index(), fold.other().index());
        ArmParams {
            theta1: self.propensity[1][f].theta(),
            theta0: self.propensity[0][f].theta(),
            beta1: self.outcome[1][g].beta(),
            beta0: self.outcome[0][g].beta(),
        }
    }
}

/// Arm-specific coefficients; `theta_w` parametrizes
/// `P(W = w | x) = 1 / (1 + exp(-x'theta_w))`.
#[derive(Debug, Clone)]
pub struct ArmParams {
    pub theta1: Array1<f64>,
    pub theta0: Array1<f64>,
    pub beta1: Array1<f64>,
    pub beta0: Array1<f64>,
}

impl ArmParams {
    /// True coefficients of a simulated design, with `theta_0 = -theta`.
    pub fn from_truth(truth: &TrueParams) -> Self {
        let theta = Array1::from(truth.theta.clone());
        Self {
            theta0: -&theta,
            theta1: theta,
            beta1: Array1::from(truth.beta1.clone()),
            beta0: Array1::from(truth.beta0.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceParts {
    pub omega_hat: f64,
    pub v0_hat: f64,
    pub v1_hat: f64,
    /// `omega_hat + v0_hat + v1_hat`.
    pub v_hat: f64,
    #[serde(skip)]
    pub clamp_count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct VarianceSums {
    omega: f64,
    v0: f64,
    v1: f64,
    clamps: usize,
}

fn variance_sums(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    w: &[u8],
    params: &ArmParams,
    tau_hat: f64,
) -> VarianceSums {
    let mut sums = VarianceSums::default();
    let contrast = x.dot(&(&params.beta1 - &params.beta0));
    let fit1 = x.dot(&params.beta1);
    let fit0 = x.dot(&params.beta0);
    let index1 = x.dot(&params.theta1);
    let index0 = x.dot(&params.theta0);
    for i in 0..w.len() {
        sums.omega += (contrast[i] - tau_hat).powi(2);
        if w[i] == 1 {
            let q = 1.0 + clamped_exp_neg(index1[i], &mut sums.clamps);
            sums.v1 += ((y[i] - fit1[i]) * q).powi(2);
        } else {
            let q = 1.0 + clamped_exp_neg(index0[i], &mut sums.clamps);
            sums.v0 += ((y[i] - fit0[i]) * q).powi(2);
        }
    }
    sums
}

fn finish_variance(sums: VarianceSums, n: usize) -> VarianceParts {
    let n = n as f64;
    let (omega_hat, v0_hat, v1_hat) = (sums.omega / n, sums.v0 / n, sums.v1 / n);
    VarianceParts {
        omega_hat,
        v0_hat,
        v1_hat,
        v_hat: omega_hat + v0_hat + v1_hat,
        clamp_count: sums.clamps,
    }
}

/// Plug-in variance: `Omega = mean (X'(beta_1 - beta_0) - tau)^2` and
/// `V_w = (1/n) sum 1{W = w} (Y - X'beta_w)^2 q(X'theta_w)^2`.
pub fn estimate_variance(data: &Dataset, params: &ArmParams, tau_hat: f64) -> Result<VarianceParts> {
    for v in [&params.theta1, &params.theta0, &params.beta1, &params.beta0] {
        if v.len() != data.p() {
            return Err(SdrError::invalid("coefficient length does not match the dataset"));
        }
    }
    let sums = variance_sums(data.x(), data.y(), data.w(), params, tau_hat);
    Ok(finish_variance(sums, data.n()))
}

fn estimate_variance_per_fold(data: &Dataset, nuisance: &NuisanceFit, tau_hat: f64) -> VarianceParts {
    let mut total = VarianceSums::default();
    for fold in FoldId::BOTH {
        let sub = data.subset(nuisance.split.fold(fold));
        let s = variance_sums(sub.x.view(), sub.y.view(), &sub.w, &nuisance.cross_fitted(fold), tau_hat);
        total.omega += s.omega;
        total.v0 += s.v0;
        total.v1 += s.v1;
        total.clamps += s.clamps;
    }
    finish_variance(total, data.n())
}

/// Standard normal quantile `z_{1 - (1 - level)/2}`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SdrError::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// `tau_hat -/+ z sqrt(v_hat / n)`.
pub fn confidence_interval(tau_hat: f64, v_hat: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(v_hat >= 0.0 && v_hat.is_finite()) {
        return Err(SdrError::invalid(format!("variance must be finite and nonnegative, got {v_hat}")));
    }
    if n == 0 {
        return Err(SdrError::invalid("sample size must be positive"));
    }
    let half = normal_quantile(level)? * (v_hat / n as f64).sqrt();
    Ok((tau_hat - half, tau_hat + half))
}

#[derive(Debug, Clone, Serialize)]
pub struct SdrDiagnostics {
    pub lambda_theta: [f64; 2],
    pub lambda_beta: [f64; 2],
    /// `[arm][fold]`.
    pub balance_inf_norm: [[f64; 2]; 2],
    pub lasso_kkt: [[f64; 2]; 2],
    pub propensity_converged: [[bool; 2]; 2],
    pub outcome_converged: [[bool; 2]; 2],
    pub refined: [[bool; 2]; 2],
    pub clamp_count: usize,
    pub resplits: usize,
    pub warnings: Vec<String>,
}

impl SdrDiagnostics {
    pub fn converged(&self) -> bool {
        self.propensity_converged.iter().flatten().all(|&c| c) && self.outcome_converged.iter().flatten().all(|&c| c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdrEstimate {
    pub method: Method,
    pub n: usize,
    pub tau_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub v_hat: f64,
    pub omega_hat: f64,
    pub v0_hat: f64,
    pub v1_hat: f64,
    /// `[arm][fold]`.
    pub mu_hat: [[f64; 2]; 2],
    pub diagnostics: SdrDiagnostics,
}

impl SdrEstimate {
    pub fn covers(&self, tau: f64) -> bool {
        self.ci_lower <= tau && tau <= self.ci_upper
    }
}

/// Redraws the split until both arms appear in both folds.
pub fn split_with_both_arms<R: Rng + ?Sized>(data: &Dataset, max_attempts: usize, rng: &mut R) -> Result<(FoldSplit, usize)> {
    let mut missing_arm = 0;
    for attempt in 0..max_attempts {
        let split = split_halves(data.n(), rng)?;
        let missing = FoldId::BOTH.iter().find_map(|&fold| {
            let rows = split.fold(fold);
            let treated = rows.iter().filter(|&&i| data.w()[i] == 1).count();
            if treated == 0 {
                Some(1)
            } else if treated == rows.len() {
                Some(0)
            } else {
                None
            }
        });
        match missing {
            None => return Ok((split, attempt)),
            Some(arm) => missing_arm = arm,
        }
    }
    Err(SdrError::EmptyArmInFold {
        arm: missing_arm,
        attempts: max_attempts,
    })
}

/// Fits the four `(arm, fold)` nuisance pairs on a given split.
pub fn fit_nuisance(data: &Dataset, split: FoldSplit, cfg: &SolverConfig) -> Result<NuisanceFit> {
    let mut propensity: Vec<Vec<PropensityFit>> = vec![Vec::new(), Vec::new()];
    let mut outcome: Vec<Vec<OutcomeFit>> = vec![Vec::new(), Vec::new()];
    let mut weight_clamp_count = 0;
    for arm in [0u8, 1] {
        for fold in FoldId::BOTH {
            let sub = data.subset(split.fold(fold));
            let lam_theta = cfg.lambda_theta(data.p(), sub.len());
            let lam_beta = cfg.lambda_beta(data.p(), sub.len());
            let prop = fit_propensity(sub.x.view(), &sub.w, arm, lam_theta, cfg)?;
            let index = sub.x.dot(&prop.theta());
            let weights = Array1::from_iter((0..sub.len()).map(|i| {
                if sub.w[i] == arm {
                    clamped_exp_neg(index[i], &mut weight_clamp_count)
                } else {
                    0.0
                }
            }));
            let out = fit_weighted_lasso(sub.x.view(), sub.y.view(), weights.view(), lam_beta, cfg)?;
            propensity[usize::from(arm)].push(prop);
            outcome[usize::from(arm)].push(out);
        }
    }
    let pack = |v: Vec<Vec<PropensityFit>>| -> [[PropensityFit; 2]; 2] {
        let mut it = v.into_iter().map(|arm| <[PropensityFit; 2]>::try_from(arm).expect("two folds"));
        [it.next().unwrap(), it.next().unwrap()]
    };
    let pack_out = |v: Vec<Vec<OutcomeFit>>| -> [[OutcomeFit; 2]; 2] {
        let mut it = v.into_iter().map(|arm| <[OutcomeFit; 2]>::try_from(arm).expect("two folds"));
        [it.next().unwrap(), it.next().unwrap()]
    };
    Ok(NuisanceFit {
        split,
        propensity: pack(propensity),
        outcome: pack_out(outcome),
        weight_clamp_count,
        resplits: 0,
    })
}

/// Full pipeline: split, nuisance fits, fold means, variance and interval.
pub fn estimate_ate_sdr<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<(SdrEstimate, NuisanceFit)> {
    cfg.validate()?;
    let (split, resplits) = split_with_both_arms(data, cfg.max_resplits, rng)?;
    let mut nuisance = fit_nuisance(data, split, &cfg.solver)?;
    nuisance.resplits = resplits;
    let estimate = assemble_sdr(data, &nuisance, cfg)?;
    Ok((estimate, nuisance))
}

/// Fold means, ATE, variance and interval from fitted nuisances.
pub fn assemble_sdr(data: &Dataset, nuisance: &NuisanceFit, cfg: &EstimatorConfig) -> Result<SdrEstimate> {
    let mut mu_hat = [[0.0; 2]; 2];
    let mut clamp_count = nuisance.weight_clamp_count;
    for arm in [0u8, 1] {
        for fold in FoldId::BOTH {
            let m = mu_hat_fold(data, &nuisance.split, arm, &nuisance.pair(arm, fold)?)?;
            mu_hat[usize::from(arm)][fold.index()] = m.mu;
            clamp_count += m.clamp_count;
        }
    }
    let tau_hat = 0.5 * ((mu_hat[1][0] - mu_hat[0][0]) + (mu_hat[1][1] - mu_hat[0][1]));
    let parts = match cfg.variance {
        VarianceMode::FoldAveraged => estimate_variance(data, &nuisance.averaged(), tau_hat)?,
        VarianceMode::PerFold => estimate_variance_per_fold(data, nuisance, tau_hat),
    };
    clamp_count += parts.clamp_count;
    let (ci_lower, ci_upper) = confidence_interval(tau_hat, parts.v_hat, data.n(), cfg.level)?;

    let by = |f: &dyn Fn(usize, usize) -> f64| [[f(0, 0), f(0, 1)], [f(1, 0), f(1, 1)]];
    let by_flag = |f: &dyn Fn(usize, usize) -> bool| [[f(0, 0), f(0, 1)], [f(1, 0), f(1, 1)]];
    let mut warnings = Vec::new();
    for (a, arm_fits) in nuisance.propensity.iter().enumerate() {
        for (f, fit) in arm_fits.iter().enumerate() {
            if let Some(msg) = &fit.warning {
                warnings.push(format!("arm {a}, fold {}: {msg}", ["A", "B"][f]));
            }
        }
    }
    for (a, arm_fits) in nuisance.outcome.iter().enumerate() {
        for (f, fit) in arm_fits.iter().enumerate() {
            if !fit.converged {
                warnings.push(format!("arm {a}, fold {}: outcome lasso did not converge", ["A", "B"][f]));
            }
        }
    }
    let diagnostics = SdrDiagnostics {
        lambda_theta: [nuisance.propensity[0][0].lambda, nuisance.propensity[0][1].lambda],
        lambda_beta: [nuisance.outcome[0][0].lambda, nuisance.outcome[0][1].lambda],
        balance_inf_norm: by(&|a, f| nuisance.propensity[a][f].balance_inf_norm),
        lasso_kkt: by(&|a, f| nuisance.outcome[a][f].kkt_inf_norm),
        propensity_converged: by_flag(&|a, f| nuisance.propensity[a][f].converged),
        outcome_converged: by_flag(&|a, f| nuisance.outcome[a][f].converged),
        refined: by_flag(&|a, f| nuisance.propensity[a][f].refined),
        clamp_count,
        resplits: nuisance.resplits,
        warnings,
    };
    Ok(SdrEstimate {
        method: Method::Sdr,
        n: data.n(),
        tau_hat,
        se: (parts.v_hat / data.n() as f64).sqrt(),
        ci_lower,
        ci_upper,
        level: cfg.level,
        v_hat: parts.v_hat,
        omega_hat: parts.omega_hat,
        v0_hat: parts.v0_hat,
        v1_hat: parts.v1_hat,
        mu_hat,
        diagnostics,
    })
}

#[derive(Debug, Clone)]
pub struct InfluenceDiagnostics {
    pub psi: Array1<f64>,
    /// `mean(psi^2)`.
    pub v_star: f64,
    pub mean: f64,
    /// Sample standard deviation of `psi`.
    pub sd: f64,
}

/// `psi = X'(beta_1 - beta_0) + W (Y - X'beta_1)/e - (1 - W)(Y - X'beta_0)/(1 - e) - tau`
/// with `e = 1 / (1 + exp(-X'theta))`.
pub fn influence_values(
    data: &Dataset,
    tau: f64,
    beta1: ArrayView1<'_, f64>,
    beta0: ArrayView1<'_, f64>,
    theta: ArrayView1<'_, f64>,
) -> Result<InfluenceDiagnostics> {
    if beta1.len() != data.p() || beta0.len() != data.p() || theta.len() != data.p() {
        return Err(SdrError::invalid("coefficient length does not match the dataset"));
    }
    let x = data.x();
    let fit1 = x.dot(&beta1);
    let fit0 = x.dot(&beta0);
    let index = x.dot(&theta);
    let mut psi = Array1::zeros(data.n());
    for i in 0..data.n() {
        let z = index[i].clamp(-EXP_CLAMP, EXP_CLAMP);
        let e = 1.0 / (1.0 + (-z).exp());
        if e <= 0.0 || e >= 1.0 {
            return Err(SdrError::DegeneratePropensity { row: i });
        }
        let y = data.y()[i];
        let correction = if data.w()[i] == 1 {
            (y - fit1[i]) / e
        } else {
            -(y - fit0[i]) / (1.0 - e)
        };
        psi[i] = fit1[i] - fit0[i] + correction - tau;
    }
    let n = data.n() as f64;
    let mean = psi.sum() / n;
    let v_star = psi.dot(&psi) / n;
    let sd = (psi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(InfluenceDiagnostics { psi, v_star, mean, sd })
}

/// Per-unit terms of `W eps^2 q(X'theta_1)^2`, `(1 - W) eps^2 q(X'theta_0)^2`
/// and `(X'(beta_1 - beta_0) - tau)^2`, whose sum has the same mean as `psi^2`.
pub fn variance_decomposition_terms(data: &Dataset, params: &ArmParams, tau: f64) -> [Array1<f64>; 3] {
    let x = data.x();
    let contrast = x.dot(&(&params.beta1 - &params.beta0));
    let fit1 = x.dot(&params.beta1);
    let fit0 = x.dot(&params.beta0);
    let index1 = x.dot(&params.theta1);
    let index0 = x.dot(&params.theta0);
    let mut clamps = 0;
    let n = data.n();
    let mut treated = Array1::zeros(n);
    let mut control = Array1::zeros(n);
    for i in 0..n {
        let y = data.y()[i];
        if data.w()[i] == 1 {
            treated[i] = ((y - fit1[i]) * (1.0 + clamped_exp_neg(index1[i], &mut clamps))).powi(2);
        } else {
            control[i] = ((y - fit0[i]) * (1.0 + clamped_exp_neg(index0[i], &mut clamps))).powi(2);
        }
    }
    let omega = contrast.mapv(|c| (c - tau).powi(2));
    [treated, control, omega]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn two_unit_data() -> Dataset {
        Dataset::new(
            array![[1.0], [1.0], [1.0], [1.0]],
            array![3.0, 5.0, 3.0, 5.0],
            vec![1, 0, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn gamma_weight_examples() {
        let x = array![[0.0, 0.0], [1.0, -1.0], [30.0, 30.0]];
        let g = gamma_weights(x.view(), array![1.0, 1.0].view());
        assert_eq!(g.weights[0], 2.0);
        assert_eq!(g.weights[1], 2.0);
        assert_abs_diff_eq!(g.weights[2], 1.0, epsilon = 1e-15);
        assert_eq!(g.clamp_count, 1);
        let g = gamma_weights(x.view(), array![0.0, 0.0].view());
        assert!(g.weights.iter().all(|&v| v == 2.0));
        let huge = gamma_weights(array![[-1e6]].view(), array![1.0].view());
        assert!(huge.weights[0].is_finite());
        assert_eq!(huge.clamp_count, 1);
    }

    #[test]
    fn fold_mean_hand_computation() {
        let data = two_unit_data();
        let split = FoldSplit {
            fold_a: vec![0, 1],
            fold_b: vec![2, 3],
        };
        let pair = CrossFitPair::new(
            FoldId::A,
            TrainedOn::new(FoldId::A, array![0.0]),
            TrainedOn::new(FoldId::B, array![0.0]),
        )
        .unwrap();
        let m = mu_hat_fold(&data, &split, 1, &pair).unwrap();
        assert_abs_diff_eq!(m.mu, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn fold_mean_with_zero_residuals_is_mean_fit() {
        let data = Dataset::new(
            array![[1.0], [2.0], [3.0], [4.0]],
            array![2.0, 4.0, 6.0, 8.0],
            vec![1, 0, 1, 0],
        )
        .unwrap();
        let split = FoldSplit {
            fold_a: vec![0, 1],
            fold_b: vec![2, 3],
        };
        let pair = CrossFitPair::new(
            FoldId::B,
            TrainedOn::new(FoldId::B, array![0.7]),
            TrainedOn::new(FoldId::A, array![2.0]),
        )
        .unwrap();
        let m = mu_hat_fold(&data, &split, 1, &pair).unwrap();
        assert_abs_diff_eq!(m.mu, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn same_fold_outcome_fit_is_rejected() {
        let same = CrossFitPair::new(
            FoldId::A,
            TrainedOn::new(FoldId::A, array![0.0]),
            TrainedOn::new(FoldId::A, array![0.0]),
        );
        assert!(same.is_err());
        let swapped = CrossFitPair::new(
            FoldId::A,
            TrainedOn::new(FoldId::B, array![0.0]),
            TrainedOn::new(FoldId::A, array![0.0]),
        );
        assert!(swapped.is_err());
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = confidence_interval(0.0, 1.0, 100, 0.95).unwrap();
        assert_abs_diff_eq!(hi, 0.195_996_398_454_005_4, epsilon = 1e-9);
        assert_abs_diff_eq!(lo, -hi, epsilon = 0.0);
        let (lo, hi) = confidence_interval(0.3, 0.0, 50, 0.9).unwrap();
        assert_eq!((lo, hi), (0.3, 0.3));
        assert!(confidence_interval(0.0, -1e-12, 10, 0.95).is_err());
        let mut previous = 0.0;
        for level in [0.5, 0.8, 0.9, 0.95, 0.99, 0.999] {
            let (lo, hi) = confidence_interval(1.0, 2.0, 40, level).unwrap();
            assert!(hi - lo > previous);
            assert_abs_diff_eq!(0.5 * (lo + hi), 1.0, epsilon = 1e-15);
            previous = hi - lo;
        }
    }

    #[test]
    fn variance_zero_residual_and_constant_contrast() {
        let x = array![[1.0, 0.5], [2.0, -1.0], [0.3, 0.2], [-1.0, 1.0]];
        let beta1 = array![1.0, 2.0];
        let beta0 = array![-0.5, 1.0];
        let w = vec![1, 0, 1, 0];
        let y = Array1::from_iter((0..4).map(|i| {
            let b = if w[i] == 1 { &beta1 } else { &beta0 };
            x.row(i).dot(b)
        }));
        let data = Dataset::new(x.clone(), y, w).unwrap();
        let params = ArmParams {
            theta1: array![0.3, -0.2],
            theta0: array![-0.1, 0.4],
            beta1: beta1.clone(),
            beta0: beta0.clone(),
        };
        let v = estimate_variance(&data, &params, 0.1).unwrap();
        assert_eq!(v.v0_hat, 0.0);
        assert_eq!(v.v1_hat, 0.0);
        assert_eq!(v.v_hat, v.omega_hat);
        let contrast = x.dot(&(&beta1 - &beta0));
        let expected = contrast.iter().map(|c| (c - 0.1).powi(2)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(v.omega_hat, expected, epsilon = 1e-14);

        let same = ArmParams {
            beta0: beta1.clone(),
            ..params
        };
        let v = estimate_variance(&data, &same, 0.0).unwrap();
        assert_eq!(v.omega_hat, 0.0);
        assert_eq!(v.v_hat, v.omega_hat + v.v0_hat + v.v1_hat);
    }

    #[test]
    fn influence_reduction_at_half_propensity() {
        let data = Dataset::new(
            array![[1.0], [-2.0], [0.5], [3.0]],
            array![1.5, -0.5, 2.0, 4.0],
            vec![1, 0, 0, 1],
        )
        .unwrap();
        let zero = array![0.0];
        let d = influence_values(&data, 0.25, zero.view(), zero.view(), zero.view()).unwrap();
        for i in 0..4 {
            let (w, y) = (f64::from(data.w()[i]), data.y()[i]);
            assert_abs_diff_eq!(d.psi[i], 2.0 * w * y - 2.0 * (1.0 - w) * y - 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn influence_rejects_degenerate_propensity() {
        let data = Dataset::new(array![[1.0], [1.0], [1.0], [1.0]], array![1.0, 2.0, 3.0, 4.0], vec![1, 0, 1, 0]).unwrap();
        let zero = array![0.0];
        let err = influence_values(&data, 0.0, zero.view(), zero.view(), array![60.0].view()).unwrap_err();
        assert!(matches!(err, SdrError::DegeneratePropensity { row: 0 }));
    }

    #[test]
    fn method_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("ipw".parse::<Method>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_levels() {
        assert!(serde_json::from_str::<EstimatorConfig>(r#"{"levle": 0.9}"#).is_err());
        let cfg: EstimatorConfig = serde_json::from_str(r#"{"level": 1.0}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: EstimatorConfig = serde_json::from_str(r#"{"solver": {"c_theta": 0.5}}"#).unwrap();
        assert_eq!(cfg.solver.c_theta, 0.5);
        assert_eq!(cfg.solver.kappa, 100.0);
        cfg.validate().unwrap();
    }
}
