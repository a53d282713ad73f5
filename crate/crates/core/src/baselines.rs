//! Comparator estimators: cross-fitted AIPW with lasso nuisances, and
//! approximate residual balancing (ARB).

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::Serialize;

use crate::data::{Dataset, FoldId};
use crate::error::{Result, SdrError};
use crate::estimator::{confidence_interval, split_with_both_arms, EstimatorConfig, Method};
use crate::simulate::logistic;
use crate::solvers::{fit_arb_weights, fit_logistic_lasso, fit_weighted_lasso, ArbFit, OutcomeFit};

#[derive(Debug, Clone, Default, Serialize)]
pub struct BaselineDiagnostics {
    /// Propensity estimates moved to the clamp boundary (AIPW).
    pub clamp_count: usize,
    /// Outcome lasso KKT residuals, `[arm][fit]` (one fit per fold for AIPW,
    /// one full-sample fit for ARB).
    pub lasso_kkt: [Vec<f64>; 2],
    pub outcome_converged: [Vec<bool>; 2],
    /// AIPW propensity fits, one per fold.
    pub propensity_converged: Vec<bool>,
    /// ARB weight programs, `[arm]`.
    pub arb_duality_gap: Vec<f64>,
    pub arb_converged: Vec<bool>,
    pub resplits: usize,
    pub warnings: Vec<String>,
}

impl BaselineDiagnostics {
    pub fn converged(&self) -> bool {
        self.outcome_converged.iter().flatten().all(|&c| c)
            && self.propensity_converged.iter().all(|&c| c)
            && self.arb_converged.iter().all(|&c| c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineEstimate {
    pub method: Method,
    pub n: usize,
    pub tau_hat: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub level: f64,
    pub v_hat: Option<f64>,
    pub diagnostics: BaselineDiagnostics,
}

impl BaselineEstimate {
    fn with_variance(method: Method, n: usize, tau_hat: f64, v_hat: Option<f64>, level: f64) -> Result<Self> {
        let (se, ci) = match v_hat {
            Some(v) => (Some((v / n as f64).sqrt()), Some(confidence_interval(tau_hat, v, n, level)?)),
            None => (None, None),
        };
        Ok(Self {
            method,
            n,
            tau_hat,
            se,
            ci_lower: ci.map(|c| c.0),
            ci_upper: ci.map(|c| c.1),
            level,
            v_hat,
            diagnostics: BaselineDiagnostics::default(),
        })
    }
}

/// AIPW scores from per-unit nuisance predictions.
#[derive(Debug, Clone)]
pub struct AipwScores {
    /// `m1 - m0 + W (Y - m1)/e - (1 - W)(Y - m0)/(1 - e)`.
    pub scores: Array1<f64>,
    pub clamp_count: usize,
}

/// Clamps `e` into `[eta, 1 - eta]` and forms the AIPW scores.
pub fn aipw_scores(
    y: ArrayView1<'_, f64>,
    w: &[u8],
    m1: ArrayView1<'_, f64>,
    m0: ArrayView1<'_, f64>,
    e: ArrayView1<'_, f64>,
    eta: f64,
) -> Result<AipwScores> {
    let n = y.len();
    if w.len() != n || m1.len() != n || m0.len() != n || e.len() != n {
        return Err(SdrError::invalid("AIPW inputs differ in length"));
    }
    let mut clamp_count = 0;
    let scores = Array1::from_iter((0..n).map(|i| {
        let clamped = e[i].clamp(eta, 1.0 - eta);
        if clamped != e[i] {
            clamp_count += 1;
        }
        let correction = if w[i] == 1 {
            (y[i] - m1[i]) / clamped
        } else {
            -(y[i] - m0[i]) / (1.0 - clamped)
        };
        m1[i] - m0[i] + correction
    }));
    Ok(AipwScores { scores, clamp_count })
}

fn mean_and_variance(v: &Array1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn arm_weights(w: &[u8], arm: u8) -> Array1<f64> {
    w.iter().map(|&v| f64::from(u8::from(v == arm))).collect()
}

fn record_outcome(diag: &mut BaselineDiagnostics, arm: usize, fit: &OutcomeFit, label: &str) {
    diag.lasso_kkt[arm].push(fit.kkt_inf_norm);
    diag.outcome_converged[arm].push(fit.converged);
    if !fit.converged {
        diag.warnings.push(format!("arm {arm}, {label}: outcome lasso did not converge"));
    }
}

/// Cross-fitted AIPW: logistic-lasso propensity and per-arm lasso outcome
/// fits trained on one fold, scores evaluated on the other.
pub fn estimate_ate_aipw<R: Rng + ?Sized>(data: &Dataset, cfg: &EstimatorConfig, rng: &mut R) -> Result<BaselineEstimate> {
    cfg.validate()?;
    let solver = &cfg.solver;
    let (split, resplits) = split_with_both_arms(data, cfg.max_resplits, rng)?;
    let n = data.n();
    let mut m1 = Array1::zeros(n);
    let mut m0 = Array1::zeros(n);
    let mut e = Array1::zeros(n);
    let mut diag = BaselineDiagnostics {
        resplits,
        ..Default::default()
    };
    for train in FoldId::BOTH {
        let fold = data.subset(split.fold(train));
        let lam_theta = solver.lambda_theta(data.p(), fold.len());
        let lam_beta = solver.lambda_beta(data.p(), fold.len());
        let prop = fit_logistic_lasso(fold.x.view(), &fold.w, lam_theta, solver)?;
        diag.propensity_converged.push(prop.converged());
        if !prop.converged() {
            diag.warnings.push(format!("fold {train:?}: propensity fit stopped: {:?}", prop.stop));
        }
        let mut betas = Vec::with_capacity(2);
        for arm in [0u8, 1] {
            let fit = fit_weighted_lasso(fold.x.view(), fold.y.view(), arm_weights(&fold.w, arm).view(), lam_beta, solver)?;
            record_outcome(&mut diag, usize::from(arm), &fit, &format!("fold {train:?}"));
            betas.push(fit.beta());
        }
        let x = data.x();
        for &i in split.fold(train.other()) {
            let xi = x.row(i);
            m0[i] = xi.dot(&betas[0]);
            m1[i] = xi.dot(&betas[1]);
            e[i] = logistic(xi.dot(&prop.coef));
        }
    }
    let scores = aipw_scores(data.y(), data.w(), m1.view(), m0.view(), e.view(), cfg.propensity_clamp)?;
    let (tau_hat, v_hat) = mean_and_variance(&scores.scores);
    let mut out = BaselineEstimate::with_variance(Method::Aipw, n, tau_hat, Some(v_hat), cfg.level)?;
    diag.clamp_count = scores.clamp_count;
    out.diagnostics = diag;
    Ok(out)
}

/// ARB point estimate and plug-in variance from fitted pieces.
#[derive(Debug, Clone, Copy)]
pub struct ArbParts {
    pub tau_hat: f64,
    pub v_hat: f64,
}

/// `tau = (1/n) sum [X'(beta_1 - beta_0) + gamma_i (2W_i - 1)(Y_i - X_i'beta_{W_i})]`,
/// `V = (1/n) sum [(X'(beta_1 - beta_0) - tau) + gamma_i (2W_i - 1) eps_i]^2`.
/// `gamma` holds one weight per unit (the weight of its own arm).
pub fn arb_combine(data: &Dataset, beta1: &Array1<f64>, beta0: &Array1<f64>, gamma: &Array1<f64>) -> Result<ArbParts> {
    if beta1.len() != data.p() || beta0.len() != data.p() || gamma.len() != data.n() {
        return Err(SdrError::invalid("ARB inputs do not match the dataset"));
    }
    let fit1 = data.x().dot(beta1);
    let fit0 = data.x().dot(beta0);
    let n = data.n();
    let terms = Array1::from_iter((0..n).map(|i| {
        let (sign, resid) = if data.w()[i] == 1 {
            (1.0, data.y()[i] - fit1[i])
        } else {
            (-1.0, data.y()[i] - fit0[i])
        };
        (fit1[i] - fit0[i], gamma[i] * sign * resid)
    }));
    let tau_hat = terms.iter().map(|(c, r)| c + r).sum::<f64>() / n as f64;
    let v_hat = terms.iter().map(|(c, r)| (c - tau_hat + r).powi(2)).sum::<f64>() / n as f64;
    Ok(ArbParts { tau_hat, v_hat })
}

/// Approximate residual balancing with full-sample lasso outcome fits.
pub fn estimate_ate_arb(data: &Dataset, cfg: &EstimatorConfig) -> Result<BaselineEstimate> {
    cfg.validate()?;
    let solver = &cfg.solver;
    let lam_beta = solver.lambda_beta(data.p(), data.n());
    let mut diag = BaselineDiagnostics::default();
    let mut betas = Vec::with_capacity(2);
    let mut gamma = Array1::zeros(data.n());
    for arm in [0u8, 1] {
        let fit = fit_weighted_lasso(data.x(), data.y(), arm_weights(data.w(), arm).view(), lam_beta, solver)?;
        record_outcome(&mut diag, usize::from(arm), &fit, "full sample");
        betas.push(fit.beta());
        let weights: ArbFit = fit_arb_weights(data.x(), data.w(), arm, &cfg.arb)?;
        diag.arb_duality_gap.push(weights.duality_gap);
        diag.arb_converged.push(weights.converged);
        if !weights.converged {
            diag.warnings.push(format!(
                "arm {arm}: balancing weights stopped with duality gap {:.3e}",
                weights.duality_gap
            ));
        }
        for (&row, &g) in weights.rows.iter().zip(&weights.gamma) {
            gamma[row] = g;
        }
    }
    let parts = arb_combine(data, &betas[1], &betas[0], &gamma)?;
    let mut out = BaselineEstimate::with_variance(Method::Arb, data.n(), parts.tau_hat, Some(parts.v_hat), cfg.level)?;
    out.diagnostics = diag;
    Ok(out)
}
