//! Penalized convex fits used by the estimators.
//!
//! Three smooth losses share one solver interface: the covariate-balancing
//! exponential loss (propensity, one program per arm), the observation
//! weighted squared loss (outcome lasso) and the logistic log-likelihood
//! (AIPW propensity). The Dantzig-type refinement of the propensity fit and
//! the residual-balancing weight program live in their own modules.

mod arb;
mod dantzig;
mod fista;
pub mod loss;
mod newton;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};
use loss::{l1_norm, BalancingLoss, Design, GlmLoss, LogisticLoss, SquaredLoss};

pub use arb::{fit_arb_weights, ArbConfig, ArbFit};
pub use dantzig::dantzig_refine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Proximal Newton with coordinate-descent inner solves.
    #[default]
    ProxNewton,
    /// Accelerated proximal gradient (FISTA) with backtracking.
    ProxGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// `lambda_theta = c_theta * sqrt(ln p / b)`, b the training fold size.
    pub c_theta: f64,
    /// `lambda_beta = c_beta * sqrt(ln p / b)`.
    pub c_beta: f64,
    /// l1 radius above which the propensity fit is refined.
    pub kappa: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub dantzig_tol: f64,
    pub algorithm: Algorithm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c_theta: 1.0,
            c_beta: 1.0,
            kappa: 100.0,
            grad_tol: 1e-7,
            max_iter: 5000,
            dantzig_tol: 1e-6,
            algorithm: Algorithm::ProxNewton,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_theta", self.c_theta),
            ("c_beta", self.c_beta),
            ("kappa", self.kappa),
            ("grad_tol", self.grad_tol),
            ("dantzig_tol", self.dantzig_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SdrError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(SdrError::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }

    pub fn lambda_theta(&self, p: usize, fold_size: usize) -> f64 {
        self.c_theta * penalty_rate(p, fold_size)
    }

    pub fn lambda_beta(&self, p: usize, fold_size: usize) -> f64 {
        self.c_beta * penalty_rate(p, fold_size)
    }
}

/// `sqrt(ln p / b)`.
pub fn penalty_rate(p: usize, b: usize) -> f64 {
    ((p as f64).ln() / b as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationCap,
    /// No descent step could be found before reaching tolerance.
    Stalled,
}

/// Raw output of a smooth + l1 solve.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub coef: Array1<f64>,
    pub objective: f64,
    pub kkt_inf_norm: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Penalized objective after every accepted iterate, starting value first.
    pub trace: Vec<f64>,
}

impl PenalizedFit {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

/// Propensity coefficients for one arm and fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityFit {
    pub theta: Vec<f64>,
    pub lambda: f64,
    /// Penalized balancing loss at `theta`.
    pub objective: f64,
    pub balance_inf_norm: f64,
    pub refined: bool,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl PropensityFit {
    pub fn theta(&self) -> Array1<f64> {
        Array1::from(self.theta.clone())
    }

    pub fn l1_norm(&self) -> f64 {
        self.theta.iter().map(|v| v.abs()).sum()
    }
}

/// Outcome lasso coefficients for one arm and fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl OutcomeFit {
    pub fn beta(&self) -> Array1<f64> {
        Array1::from(self.beta.clone())
    }
}

/// A smooth loss on a design together with its l1 weight.
pub(crate) struct Problem<'a, L: GlmLoss> {
    pub design: &'a Design<'a>,
    pub loss: &'a L,
    pub lam: f64,
    /// Abort with a separation error once `||coef||_1` exceeds this.
    pub divergence_radius: Option<(f64, u8)>,
}

impl<L: GlmLoss> Problem<'_, L> {
    pub fn objective(&self, eta: &Array1<f64>, coef: &Array1<f64>) -> f64 {
        self.loss.mean_value(eta) + self.lam * l1_norm(coef)
    }

    pub fn check_divergence(&self, coef: &Array1<f64>, objective: f64) -> Result<()> {
        if let Some((radius, arm)) = self.divergence_radius {
            let norm = l1_norm(coef);
            if norm > radius {
                return Err(SdrError::Separation {
                    arm,
                    objective,
                    l1_norm: norm,
                });
            }
        }
        Ok(())
    }

    pub fn solve(&self, cfg: &SolverConfig, init: Array1<f64>) -> Result<PenalizedFit> {
        match cfg.algorithm {
            Algorithm::ProxNewton => newton::solve(self, cfg, init),
            Algorithm::ProxGradient => fista::solve(self, cfg, init),
        }
    }
}

/// `sign(z) max(|z| - lam, 0)`.
pub fn soft_threshold(z: f64, lam: f64) -> f64 {
    if z > lam {
        z - lam
    } else if z < -lam {
        z + lam
    } else {
        0.0
    }
}

/// `q(z) = 1 + exp(-z)`, the inverse of the logistic propensity.
pub fn inverse_propensity(z: f64) -> f64 {
    1.0 + (-z).exp()
}

/// `(1/|F|) sum_i [1 - 1{W_i = arm} q(x_i' theta)] x_i`.
pub fn balance_residual(x: ArrayView2<'_, f64>, w: &[u8], arm: u8, theta: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = x.nrows();
    let eta = x.dot(&theta);
    let factors = Array1::from_iter(
        (0..m).map(|i| if w[i] == arm { 1.0 - inverse_propensity(eta[i]) } else { 1.0 }),
    );
    x.t().dot(&factors) / m as f64
}

fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn check_fold(x: ArrayView2<'_, f64>, w: &[u8]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(SdrError::invalid("empty training fold"));
    }
    if w.len() != x.nrows() {
        return Err(SdrError::invalid("treatment vector length does not match the design"));
    }
    Ok(())
}

fn check_both_arms(w: &[u8]) -> Result<()> {
    let treated = w.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == w.len() {
        return Err(SdrError::invalid("both arms must be present in the training fold"));
    }
    Ok(())
}

/// Penalized covariate-balancing fit: minimizes
/// `(1/|F|) sum [1{W != arm} x'theta + 1{W = arm} exp(-x'theta)] + lam ||theta||_1`.
pub fn fit_balancing_logistic(
    x: ArrayView2<'_, f64>,
    w: &[u8],
    arm: u8,
    lam: f64,
    cfg: &SolverConfig,
) -> Result<PropensityFit> {
    check_fold(x, w)?;
    check_both_arms(w)?;
    let design = Design::new(x);
    let loss = BalancingLoss::new(w, arm);
    let problem = Problem {
        design: &design,
        loss: &loss,
        lam,
        divergence_radius: Some((10.0 * cfg.kappa, arm)),
    };
    let fit = problem.solve(cfg, Array1::zeros(x.ncols()))?;
    let balance = inf_norm(&balance_residual(x, w, arm, fit.coef.view()));
    Ok(PropensityFit {
        theta: fit.coef.to_vec(),
        lambda: lam,
        objective: fit.objective,
        balance_inf_norm: balance,
        refined: false,
        iterations: fit.iterations,
        converged: fit.converged(),
        warning: (!fit.converged()).then(|| format!("balancing fit stopped: {:?}", fit.stop)),
    })
}

/// The full propensity step: penalized balancing fit, then the l1-minimal
/// refinement when the fit leaves the l1 ball of radius `kappa`.
pub fn fit_propensity(
    x: ArrayView2<'_, f64>,
    w: &[u8],
    arm: u8,
    lam: f64,
    cfg: &SolverConfig,
) -> Result<PropensityFit> {
    let check = fit_balancing_logistic(x, w, arm, lam, cfg)?;
    dantzig_refine(x, w, arm, &check, lam, cfg.kappa, cfg)
}

/// Minimizes `(1/|F|) sum omega_i (y_i - x_i'beta)^2 + lam ||beta||_1`,
/// starting from zero.
pub fn fit_weighted_lasso(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    weights: ArrayView1<'_, f64>,
    lam: f64,
    cfg: &SolverConfig,
) -> Result<OutcomeFit> {
    check_fold(x, &vec![0; y.len()])?;
    if weights.len() != x.nrows() {
        return Err(SdrError::invalid("weight vector length does not match the design"));
    }
    if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SdrError::invalid("observation weights must be finite and nonnegative"));
    }
    if !weights.iter().any(|&v| v > 0.0) {
        return Err(SdrError::invalid("at least one observation weight must be positive"));
    }
    let design = Design::new(x);
    let loss = SquaredLoss::new(y, weights);
    let problem = Problem {
        design: &design,
        loss: &loss,
        lam,
        divergence_radius: None,
    };
    let fit = problem.solve(cfg, Array1::zeros(x.ncols()))?;
    Ok(OutcomeFit {
        beta: fit.coef.to_vec(),
        lambda: lam,
        objective: fit.objective,
        kkt_inf_norm: fit.kkt_inf_norm,
        iterations: fit.iterations,
        converged: fit.converged(),
    })
}

/// l1-penalized logistic regression of `w` on `x` (no intercept).
pub fn fit_logistic_lasso(
    x: ArrayView2<'_, f64>,
    w: &[u8],
    lam: f64,
    cfg: &SolverConfig,
) -> Result<PenalizedFit> {
    check_fold(x, w)?;
    check_both_arms(w)?;
    let design = Design::new(x);
    let loss = LogisticLoss::new(w);
    let problem = Problem {
        design: &design,
        loss: &loss,
        lam,
        divergence_radius: Some((10.0 * cfg.kappa, 1)),
    };
    problem.solve(cfg, Array1::zeros(x.ncols()))
}

/// Gradient of the mean smooth loss at `coef`, for diagnostics and tests.
pub fn smooth_gradient<L: GlmLoss>(x: ArrayView2<'_, f64>, loss: &L, coef: &Array1<f64>) -> Array1<f64> {
    let design = Design::new(x);
    design.mean_xt(&loss.derivs(&design.predict(coef)))
}

/// Mean smooth loss at `coef`.
pub fn smooth_value<L: GlmLoss>(x: ArrayView2<'_, f64>, loss: &L, coef: &Array1<f64>) -> f64 {
    loss.mean_value(&x.dot(coef))
}
