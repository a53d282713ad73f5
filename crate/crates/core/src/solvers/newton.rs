//! Proximal Newton: a coordinate-descent solve of the penalized quadratic
//! model at each iterate, followed by an Armijo backtracking line search
//! on the true objective.

use ndarray::{Array1, Zip};

use super::loss::{kkt_violation, l1_norm, Design, GlmLoss};
use super::{PenalizedFit, Problem, SolverConfig, StopReason};
use crate::error::Result;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const CURVATURE_FLOOR: f64 = 1e-12;
const MAX_INNER_SWEEPS: usize = 100_000;

pub(crate) fn solve<L: GlmLoss>(
    problem: &Problem<'_, L>,
    cfg: &SolverConfig,
    init: Array1<f64>,
) -> Result<PenalizedFit> {
    let design = problem.design;
    let lam = problem.lam;
    let mut coef = init;
    let mut eta = design.predict(&coef);
    let mut obj = problem.objective(&eta, &coef);
    let mut trace = vec![obj];
    let mut grad = design.mean_xt(&problem.loss.derivs(&eta));
    let mut kkt = kkt_violation(&grad, &coef, lam);
    let mut iterations = 0;
    let mut stop = StopReason::IterationCap;

    while iterations < cfg.max_iter {
        if kkt <= cfg.grad_tol {
            stop = StopReason::Converged;
            break;
        }
        iterations += 1;

        let h = problem.loss.curvatures(&eta) / design.m() as f64;
        let inner_tol = (0.1 * cfg.grad_tol).max(0.01 * kkt);
        let (proposal, direction_eta) = quadratic_model_cd(design, &grad, &h, &coef, lam, inner_tol);
        let step = &proposal - &coef;
        let decrease = grad.dot(&step) + lam * (l1_norm(&proposal) - l1_norm(&coef));
        if decrease.is_nan() || decrease >= 0.0 {
            stop = StopReason::Stalled;
            break;
        }

        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial_eta = &eta + &(&direction_eta * s);
            let trial_coef = &coef + &(&step * s);
            let trial_obj = problem.objective(&trial_eta, &trial_coef);
            if trial_obj.is_finite() && trial_obj <= obj + ARMIJO * s * decrease {
                accepted = Some((trial_coef, trial_eta, trial_obj));
                break;
            }
            s *= 0.5;
        }
        let Some((next_coef, next_eta, next_obj)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        debug_assert!(next_obj <= obj, "objective increased: {obj} -> {next_obj}");
        coef = next_coef;
        eta = next_eta;
        obj = next_obj;
        trace.push(obj);
        problem.check_divergence(&coef, obj)?;

        grad = design.mean_xt(&problem.loss.derivs(&eta));
        kkt = kkt_violation(&grad, &coef, lam);
    }
    if kkt <= cfg.grad_tol {
        stop = StopReason::Converged;
    }

    Ok(PenalizedFit {
        coef,
        objective: obj,
        kkt_inf_norm: kkt,
        iterations,
        stop,
        trace,
    })
}

/// Minimizes `g'(c - c0) + 0.5 (c - c0)' X' diag(h) X (c - c0) + lam ||c||_1`
/// by cyclic coordinate descent with an active-set strategy. Returns the
/// minimizer and `X (c - c0)`.
fn quadratic_model_cd(
    design: &Design<'_>,
    grad: &Array1<f64>,
    h: &Array1<f64>,
    start: &Array1<f64>,
    lam: f64,
    tol: f64,
) -> (Array1<f64>, Array1<f64>) {
    let p = design.p();
    let m = design.m();
    let diag = design.weighted_col_norms(h).mapv(|v| v.max(CURVATURE_FLOOR));
    let mut coef = start.clone();
    // u = X (coef - start), hu = h * u
    let mut u = Array1::<f64>::zeros(m);
    let mut hu = Array1::<f64>::zeros(m);

    let update = |j: usize, coef: &mut Array1<f64>, u: &mut Array1<f64>, hu: &mut Array1<f64>| -> f64 {
        let col = design.col(j);
        let q = grad[j] + col.dot(hu);
        let old = coef[j];
        let new = super::soft_threshold(diag[j] * old - q, lam) / diag[j];
        let delta = new - old;
        if delta != 0.0 {
            coef[j] = new;
            Zip::from(&mut *u).and(&mut *hu).and(&col).and(h).for_each(|uu, hh, &x, &hv| {
                *uu += delta * x;
                *hh += delta * hv * x;
            });
        }
        diag[j] * delta.abs()
    };

    let mut sweeps = 0;
    loop {
        let mut worst = 0.0f64;
        for j in 0..p {
            worst = worst.max(update(j, &mut coef, &mut u, &mut hu));
        }
        sweeps += 1;
        if worst <= tol || sweeps >= MAX_INNER_SWEEPS {
            break;
        }
        loop {
            let active: Vec<usize> = (0..p).filter(|&j| coef[j] != 0.0).collect();
            let mut worst = 0.0f64;
            for &j in &active {
                worst = worst.max(update(j, &mut coef, &mut u, &mut hu));
            }
            sweeps += 1;
            if worst <= tol || sweeps >= MAX_INNER_SWEEPS {
                break;
            }
        }
        if sweeps >= MAX_INNER_SWEEPS {
            break;
        }
    }
    (coef, u)
}
