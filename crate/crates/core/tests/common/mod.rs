//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's own loss or solver code.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// `(1/m) sum [1{W != w} x'theta + 1{W = w} exp(-x'theta)]`.
pub fn balancing_loss(x: ArrayView2<'_, f64>, w: &[u8], arm: u8, theta: ArrayView1<'_, f64>) -> f64 {
    let m = x.nrows() as f64;
    x.rows()
        .into_iter()
        .zip(w)
        .map(|(row, &wi)| {
            let z = row.dot(&theta);
            if wi == arm {
                (-z).exp()
            } else {
                z
            }
        })
        .sum::<f64>()
        / m
}

/// `(1/m) sum [1 - 1{W = w}(1 + exp(-x'theta))] x`.
pub fn balance_residual(x: ArrayView2<'_, f64>, w: &[u8], arm: u8, theta: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut g = Array1::zeros(x.ncols());
    for (row, &wi) in x.rows().into_iter().zip(w) {
        let s = if wi == arm { -(-row.dot(&theta)).exp() } else { 1.0 };
        g.scaled_add(s, &row);
    }
    g / x.nrows() as f64
}

/// `(1/m) sum omega_i (y_i - x_i'beta)^2`.
pub fn weighted_squared_loss(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, omega: ArrayView1<'_, f64>, beta: ArrayView1<'_, f64>) -> f64 {
    let r = &y - &x.dot(&beta);
    (&omega * &r * &r).sum() / x.nrows() as f64
}

pub fn weighted_squared_gradient(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, omega: ArrayView1<'_, f64>, beta: ArrayView1<'_, f64>) -> Array1<f64> {
    let r = &y - &x.dot(&beta);
    x.t().dot(&(&omega * &r)) * (-2.0 / x.nrows() as f64)
}

/// `(1/m) sum [log(1 + exp(x'theta)) - W x'theta]`.
pub fn logistic_loss(x: ArrayView2<'_, f64>, w: &[u8], theta: ArrayView1<'_, f64>) -> f64 {
    let m = x.nrows() as f64;
    x.rows()
        .into_iter()
        .zip(w)
        .map(|(row, &wi)| {
            let z = row.dot(&theta);
            z.max(0.0) + (-z.abs()).exp().ln_1p() - f64::from(wi) * z
        })
        .sum::<f64>()
        / m
}

/// Largest violation of the lasso optimality conditions
/// `grad_j = -lam sign(beta_j)` (beta_j != 0), `|grad_j| <= lam` (beta_j = 0).
pub fn lasso_kkt_violation(grad: &Array1<f64>, beta: ArrayView1<'_, f64>, lam: f64) -> f64 {
    grad.iter()
        .zip(beta)
        .map(|(&g, &b)| {
            if b != 0.0 {
                (g + lam * b.signum()).abs()
            } else {
                (g.abs() - lam).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn central_difference(f: impl Fn(&Array1<f64>) -> f64, at: &Array1<f64>, h: f64) -> Array1<f64> {
    Array1::from_iter((0..at.len()).map(|j| {
        let mut up = at.clone();
        let mut down = at.clone();
        up[j] += h;
        down[j] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    }))
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut m = a.clone();
    let mut r = b.clone();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[[i, k]].abs().total_cmp(&m[[j, k]].abs())).unwrap();
        for c in 0..n {
            m.swap([k, c], [piv, c]);
        }
        r.swap(k, piv);
        for i in k + 1..n {
            let f = m[[i, k]] / m[[k, k]];
            for c in k..n {
                m[[i, c]] -= f * m[[k, c]];
            }
            r[i] -= f * r[k];
        }
    }
    let mut x = Array1::zeros(n);
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| m[[k, c]] * x[c]).sum();
        x[k] = (r[k] - s) / m[[k, k]];
    }
    x
}

pub fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

pub fn l1(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}
