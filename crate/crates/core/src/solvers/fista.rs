//! Monotone accelerated proximal gradient with backtracking and
//! function-value restarts.

use ndarray::Array1;

use super::loss::{kkt_violation, l1_norm, GlmLoss};
use super::{soft_threshold, PenalizedFit, Problem, SolverConfig, StopReason};
use crate::error::Result;

pub(crate) fn solve<L: GlmLoss>(
    problem: &Problem<'_, L>,
    cfg: &SolverConfig,
    init: Array1<f64>,
) -> Result<PenalizedFit> {
    let design = problem.design;
    let lam = problem.lam;
    let loss = problem.loss;

    let mut x = init;
    let mut eta_x = design.predict(&x);
    let mut obj_x = problem.objective(&eta_x, &x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut trace = vec![obj_x];
    let mut kkt = kkt_violation(&design.mean_xt(&loss.derivs(&eta_x)), &x, lam);
    let mut iterations = 0;
    let mut stop = StopReason::IterationCap;

    while iterations < cfg.max_iter {
        if kkt <= cfg.grad_tol {
            stop = StopReason::Converged;
            break;
        }
        iterations += 1;

        let eta_y = design.predict(&y);
        let smooth_y = loss.mean_value(&eta_y);
        let grad_y = design.mean_xt(&loss.derivs(&eta_y));
        let (z, eta_z, smooth_z) = loop {
            let z = (&y - &(&grad_y / lipschitz)).mapv(|v| soft_threshold(v, lam / lipschitz));
            let eta_z = design.predict(&z);
            let smooth_z = loss.mean_value(&eta_z);
            let diff = &z - &y;
            let model = smooth_y + grad_y.dot(&diff) + 0.5 * lipschitz * diff.dot(&diff);
            if smooth_z.is_finite() && smooth_z <= model + 8.0 * f64::EPSILON * smooth_y.abs().max(1.0) {
                break (z, eta_z, smooth_z);
            }
            lipschitz *= 2.0;
            if !lipschitz.is_finite() {
                return Err(crate::error::SdrError::invalid("proximal gradient step size collapsed"));
            }
        };
        let obj_z = smooth_z + lam * l1_norm(&z);

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let from_x = t == 1.0;
        if obj_z <= obj_x {
            let momentum = (t - 1.0) / t_next;
            y = &z + &((&z - &x) * momentum);
            x = z;
            eta_x = eta_z;
            obj_x = obj_z;
            t = t_next;
        } else {
            // Rejected step: keep x and restart the momentum from it. A
            // rejected step taken from x itself means the curvature estimate
            // is too optimistic at rounding level.
            y = x.clone();
            t = 1.0;
            if from_x {
                lipschitz *= 4.0;
            }
        }
        trace.push(obj_x);
        problem.check_divergence(&x, obj_x)?;
        kkt = kkt_violation(&design.mean_xt(&loss.derivs(&eta_x)), &x, lam);
        lipschitz *= 0.95;
    }
    if kkt <= cfg.grad_tol {
        stop = StopReason::Converged;
    }

    Ok(PenalizedFit {
        coef: x,
        objective: obj_x,
        kkt_inf_norm: kkt,
        iterations,
        stop,
        trace,
    })
}
