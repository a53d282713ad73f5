//! l1-minimal propensity coefficients under the balance constraint
//! `||balance_residual(theta)||_inf <= lam`.
//!
//! The constraint map is nonlinear, so the program is solved by sequential
//! linearization: at the current feasible point the residual is replaced
//! by its first-order expansion, the resulting linear-constraint l1
//! minimization is solved by column and row generation over small
//! interior-point LPs, and a backtracking step along the proposal keeps the exact nonlinear
//! constraint satisfied while the l1 norm decreases. Subproblems are solved
//! with a slightly tightened bound so that short steps stay strictly
//! feasible despite curvature and inexact inner solves; the tightening
//! shrinks geometrically as progress stalls.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::loss::{l1_norm, BalancingLoss, Design, GlmLoss};
use super::{balance_residual, inf_norm, PropensityFit, SolverConfig};
use crate::error::Result;

const MAX_LINEARIZATIONS: usize = 40;
const MAX_HALVINGS: usize = 30;
const MAX_PRICING_ROUNDS: usize = 100;
const ENTERING_PER_ROUND: usize = 10;
const PRICING_TOL: f64 = 1e-6;
const ROW_TOL: f64 = 1e-9;
/// Constraint rows with `|g_i| >= ROW_SEED_FRACTION * lam` seed the row set.
const ROW_SEED_FRACTION: f64 = 0.5;
/// Penalty on the elastic slack; a positive slack at the end of pricing
/// means the linearized program is infeasible.
const SLACK_PENALTY: f64 = 1e3;
const SLACK_TOL: f64 = 1e-9;
/// Linearized subproblems use the bound `lam - margin`; the margin starts at
/// `INITIAL_MARGIN * lam` and halves down to `MARGIN_FLOOR * lam`.
const INITIAL_MARGIN: f64 = 2e-3;
const MARGIN_FLOOR: f64 = 1e-6;

/// Returns `theta_check` untouched when its l1 norm is at most `kappa`;
/// otherwise searches for a feasible point of smaller l1 norm.
pub fn dantzig_refine(
    x: ArrayView2<'_, f64>,
    w: &[u8],
    arm: u8,
    theta_check: &PropensityFit,
    lam: f64,
    kappa: f64,
    cfg: &SolverConfig,
) -> Result<PropensityFit> {
    let start = theta_check.theta();
    let start_norm = l1_norm(&start);
    if start_norm <= kappa {
        return Ok(PropensityFit {
            refined: false,
            ..theta_check.clone()
        });
    }

    let bound = lam + cfg.grad_tol;
    let design = Design::new(x);
    let loss = BalancingLoss::new(w, arm);
    let start_balance = inf_norm(&balance_residual(x, w, arm, start.view()));
    if start_balance > bound {
        let mut out = theta_check.clone();
        out.balance_inf_norm = start_balance;
        out.warning = Some(format!(
            "refinement skipped: starting point violates the balance bound ({start_balance:.3e} > {bound:.3e})"
        ));
        return Ok(out);
    }

    let mut theta = start.clone();
    let mut norm = start_norm;
    let mut rounds = 0;
    let mut margin = INITIAL_MARGIN * lam;
    let margin_floor = (MARGIN_FLOOR * lam).min(margin);
    let mut working = WorkingSet::default();
    for _ in 0..MAX_LINEARIZATIONS {
        rounds += 1;
        let at_floor = margin <= margin_floor;
        let eta = design.predict(&theta);
        let h = loss.curvatures(&eta) / design.m() as f64;
        let g = balance_residual(x, w, arm, theta.view());
        let proposal = linearized_l1_min(&design, &h, &g, &theta, lam - margin, &mut working);

        let mut gain = 0.0;
        if l1_norm(&proposal) < norm - cfg.dantzig_tol {
            let direction = &proposal - &theta;
            let mut s = 1.0;
            for _ in 0..MAX_HALVINGS {
                let trial = &theta + &(&direction * s);
                let trial_norm = l1_norm(&trial);
                if trial_norm < norm && inf_norm(&balance_residual(x, w, arm, trial.view())) <= bound {
                    gain = norm - trial_norm;
                    theta = trial;
                    norm = trial_norm;
                    break;
                }
                s *= 0.5;
            }
        }
        if gain < cfg.dantzig_tol {
            if at_floor {
                break;
            }
            margin = (0.5 * margin).max(margin_floor);
        }
    }

    let refined = norm < start_norm;
    let balance = inf_norm(&balance_residual(x, w, arm, theta.view()));
    let objective = loss.mean_value(&design.predict(&theta)) + lam * norm;
    Ok(PropensityFit {
        theta: theta.to_vec(),
        lambda: lam,
        objective,
        balance_inf_norm: balance,
        refined,
        iterations: theta_check.iterations + rounds,
        converged: theta_check.converged,
        warning: (!refined).then(|| "refinement found no feasible point with smaller l1 norm".to_string()),
    })
}

/// Coordinates and constraint rows of the restricted linearized program,
/// carried across linearizations.
#[derive(Default)]
struct WorkingSet {
    cols: Vec<usize>,
    rows: Vec<usize>,
}

impl WorkingSet {
    fn add(set: &mut Vec<usize>, member: &mut [bool], j: usize) {
        if !member[j] {
            member[j] = true;
            set.push(j);
        }
    }
}

/// Solves `min ||v||_1 s.t. ||g + H (v - theta)||_inf <= lam` with
/// `H = X' diag(h) X` by column and row generation: the program restricted
/// to a working set of coordinates and constraints is solved as an LP,
/// violated constraints join the row set, and coordinates whose reduced cost
/// `|(H y)_j|` exceeds one at the restricted dual `y` join the column set.
/// Returns `theta` when no proposal is available.
fn linearized_l1_min(
    design: &Design<'_>,
    h: &Array1<f64>,
    g: &Array1<f64>,
    theta: &Array1<f64>,
    lam: f64,
    working: &mut WorkingSet,
) -> Array1<f64> {
    let rows = design.rows();
    // H u = X' (h * X u); h already carries the 1/m factor.
    let apply = |u: ArrayView1<'_, f64>| rows.t().dot(&(&rows.dot(&u) * h));
    // Box centre: constraint reads ||H v - c||_inf <= lam.
    let centre = &apply(theta.view()) - g;

    let p = design.p();
    let mut col_member = vec![false; p];
    let mut row_member = vec![false; p];
    for &j in &working.cols {
        col_member[j] = true;
    }
    for &i in &working.rows {
        row_member[i] = true;
    }
    for j in 0..p {
        if theta[j] != 0.0 {
            WorkingSet::add(&mut working.cols, &mut col_member, j);
        }
        if g[j].abs() >= ROW_SEED_FRACTION * lam {
            WorkingSet::add(&mut working.rows, &mut row_member, j);
        }
    }
    if working.cols.is_empty() {
        return theta.clone();
    }
    for _ in 0..MAX_PRICING_ROUNDS {
        let xs = rows.select(Axis(1), &working.cols);
        let full = rows.t().dot(&(&xs * &h.view().insert_axis(Axis(1))));
        let Some((v_s, dual, slack)) = restricted_l1_min(
            &full.select(Axis(0), &working.rows),
            &centre.select(Axis(0), &working.rows),
            lam,
        ) else {
            return theta.clone();
        };
        let residual = full.dot(&v_s) - &centre;
        let mut violated: Vec<(usize, f64)> = (0..p)
            .filter(|&i| !row_member[i])
            .map(|i| (i, residual[i].abs() - lam - slack))
            .filter(|&(_, excess)| excess > ROW_TOL)
            .collect();
        if !violated.is_empty() {
            violated.sort_by(|a, b| b.1.total_cmp(&a.1));
            for &(i, _) in violated.iter().take(ENTERING_PER_ROUND) {
                WorkingSet::add(&mut working.rows, &mut row_member, i);
            }
            continue;
        }
        let mut y = Array1::zeros(p);
        for (&i, &yi) in working.rows.iter().zip(&dual) {
            y[i] = yi;
        }
        let reduced = apply(y.view());
        let mut entering: Vec<(usize, f64)> = (0..p)
            .filter(|&j| !col_member[j])
            .map(|j| (j, reduced[j].abs()))
            .filter(|&(_, r)| r > 1.0 + PRICING_TOL)
            .collect();
        if entering.is_empty() {
            if slack > SLACK_TOL {
                return theta.clone();
            }
            let mut v = Array1::zeros(p);
            for (&j, &vj) in working.cols.iter().zip(&v_s) {
                v[j] = vj;
            }
            return v;
        }
        entering.sort_by(|a, b| b.1.total_cmp(&a.1));
        for &(j, _) in entering.iter().take(ENTERING_PER_ROUND) {
            WorkingSet::add(&mut working.cols, &mut col_member, j);
        }
    }
    theta.clone()
}

/// Elastic LP `min ||v||_1 + SLACK_PENALTY * s` subject to
/// `|K v - c| <= lam + s`, `s >= 0`. Returns the primal solution, the
/// constraint multipliers `y` (positive on upper rows) and the slack.
fn restricted_l1_min(k: &Array2<f64>, centre: &Array1<f64>, lam: f64) -> Option<(Array1<f64>, Array1<f64>, f64)> {
    let (rows, cols) = k.dim();
    // variables: v (cols), t (cols), s (1); constraint blocks:
    // K v - s <= lam + c, -K v - s <= lam - c, v - t <= 0, -v - t <= 0, -s <= 0
    let n_var = 2 * cols + 1;
    let n_con = 2 * rows + 2 * cols + 1;
    let mut colptr = Vec::with_capacity(n_var + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..cols {
        for i in 0..rows {
            rowval.push(i);
            nzval.push(k[[i, j]]);
        }
        for i in 0..rows {
            rowval.push(rows + i);
            nzval.push(-k[[i, j]]);
        }
        rowval.extend([2 * rows + j, 2 * rows + cols + j]);
        nzval.extend([1.0, -1.0]);
        colptr.push(rowval.len());
    }
    for j in 0..cols {
        rowval.extend([2 * rows + j, 2 * rows + cols + j]);
        nzval.extend([-1.0, -1.0]);
        colptr.push(rowval.len());
    }
    for i in 0..2 * rows {
        rowval.push(i);
        nzval.push(-1.0);
    }
    rowval.push(n_con - 1);
    nzval.push(-1.0);
    colptr.push(rowval.len());
    let a = CscMatrix::new(n_con, n_var, colptr, rowval, nzval);

    let mut b = Vec::with_capacity(n_con);
    b.extend(centre.iter().map(|&c| lam + c));
    b.extend(centre.iter().map(|&c| lam - c));
    b.extend(std::iter::repeat_n(0.0, 2 * cols + 1));
    let mut q = vec![0.0; n_var];
    q[cols..2 * cols].fill(1.0);
    q[2 * cols] = SLACK_PENALTY;
    let cones = [NonnegativeConeT(n_con)];
    let settings = DefaultSettingsBuilder::default().verbose(false).build().ok()?;
    let mut solver = DefaultSolver::new(&CscMatrix::zeros((n_var, n_var)), &q, &a, &b, &cones, settings).ok()?;
    solver.solve();
    if !matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        return None;
    }
    let x = &solver.solution.x;
    let z = &solver.solution.z;
    let v = Array1::from_iter(x[..cols].iter().copied());
    let dual = Array1::from_iter((0..rows).map(|i| z[i] - z[rows + i]));
    Some((v, dual, x[2 * cols]))
}
