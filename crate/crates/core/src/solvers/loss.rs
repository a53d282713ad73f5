//! Smooth losses of the form `L(theta) = (1/m) sum_i l_i(x_i' theta)` and the
//! dense design wrapper the solvers iterate over.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

/// Per-observation loss as a function of the linear predictor.
pub trait GlmLoss: Sync {
    fn value(&self, i: usize, eta: f64) -> f64;
    fn deriv(&self, i: usize, eta: f64) -> f64;
    fn curvature(&self, i: usize, eta: f64) -> f64;

    fn mean_value(&self, eta: &Array1<f64>) -> f64 {
        let m = eta.len() as f64;
        eta.iter().enumerate().map(|(i, &e)| self.value(i, e)).sum::<f64>() / m
    }

    fn derivs(&self, eta: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(eta.iter().enumerate().map(|(i, &e)| self.deriv(i, e)))
    }

    fn curvatures(&self, eta: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(eta.iter().enumerate().map(|(i, &e)| self.curvature(i, e)))
    }
}

/// `1{W != arm} eta + 1{W = arm} exp(-eta)`; its gradient is the
/// inverse-propensity balance residual.
#[derive(Debug, Clone)]
pub struct BalancingLoss {
    in_arm: Vec<bool>,
}

impl BalancingLoss {
    pub fn new(w: &[u8], arm: u8) -> Self {
        Self {
            in_arm: w.iter().map(|&v| v == arm).collect(),
        }
    }
}

impl GlmLoss for BalancingLoss {
    fn value(&self, i: usize, eta: f64) -> f64 {
        if self.in_arm[i] {
            (-eta).exp()
        } else {
            eta
        }
    }

    fn deriv(&self, i: usize, eta: f64) -> f64 {
        if self.in_arm[i] {
            -(-eta).exp()
        } else {
            1.0
        }
    }

    fn curvature(&self, i: usize, eta: f64) -> f64 {
        if self.in_arm[i] {
            (-eta).exp()
        } else {
            0.0
        }
    }
}

/// Negative Bernoulli log-likelihood with logit link.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    labels: Vec<f64>,
}

impl LogisticLoss {
    pub fn new(w: &[u8]) -> Self {
        Self {
            labels: w.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl GlmLoss for LogisticLoss {
    fn value(&self, i: usize, eta: f64) -> f64 {
        softplus(eta) - self.labels[i] * eta
    }

    fn deriv(&self, i: usize, eta: f64) -> f64 {
        crate::simulate::logistic(eta) - self.labels[i]
    }

    fn curvature(&self, _i: usize, eta: f64) -> f64 {
        let p = crate::simulate::logistic(eta);
        p * (1.0 - p)
    }
}

/// `omega_i (y_i - eta)^2`.
#[derive(Debug, Clone)]
pub struct SquaredLoss<'a> {
    y: ArrayView1<'a, f64>,
    weights: ArrayView1<'a, f64>,
}

impl<'a> SquaredLoss<'a> {
    pub fn new(y: ArrayView1<'a, f64>, weights: ArrayView1<'a, f64>) -> Self {
        Self { y, weights }
    }
}

impl GlmLoss for SquaredLoss<'_> {
    fn value(&self, i: usize, eta: f64) -> f64 {
        let r = self.y[i] - eta;
        self.weights[i] * r * r
    }

    fn deriv(&self, i: usize, eta: f64) -> f64 {
        2.0 * self.weights[i] * (eta - self.y[i])
    }

    fn curvature(&self, i: usize, _eta: f64) -> f64 {
        2.0 * self.weights[i]
    }
}

/// Row-major design plus a transposed copy for contiguous column access.
#[derive(Debug, Clone)]
pub struct Design<'a> {
    rows: ArrayView2<'a, f64>,
    cols: Array2<f64>,
}

impl<'a> Design<'a> {
    pub fn new(rows: ArrayView2<'a, f64>) -> Self {
        let cols = rows.t().as_standard_layout().into_owned();
        Self { rows, cols }
    }

    pub fn m(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows
    }

    pub fn col(&self, j: usize) -> ArrayView1<'_, f64> {
        self.cols.row(j)
    }

    /// `X coef`, skipping zero coefficients when the vector is sparse.
    pub fn predict(&self, coef: &Array1<f64>) -> Array1<f64> {
        let nnz = coef.iter().filter(|v| **v != 0.0).count();
        if nnz * 4 < self.p() {
            let mut eta = Array1::zeros(self.m());
            for (j, &c) in coef.iter().enumerate() {
                if c != 0.0 {
                    eta.scaled_add(c, &self.cols.row(j));
                }
            }
            eta
        } else {
            self.rows.dot(coef)
        }
    }

    /// `(1/m) X' scores`.
    pub fn mean_xt(&self, scores: &Array1<f64>) -> Array1<f64> {
        self.cols.dot(scores) / self.m() as f64
    }

    /// `sum_i h_i x_ij^2` for every column.
    pub fn weighted_col_norms(&self, h: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(self.cols.rows().into_iter().map(|c| {
            let mut acc = 0.0;
            Zip::from(&c).and(h).for_each(|&x, &hv| acc += hv * x * x);
            acc
        }))
    }
}

pub fn l1_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Worst violation of the subgradient optimality conditions for
/// `L + lam ||.||_1` given the smooth gradient at `coef`.
pub fn kkt_violation(grad: &Array1<f64>, coef: &Array1<f64>, lam: f64) -> f64 {
    grad.iter()
        .zip(coef.iter())
        .map(|(&g, &c)| {
            if c != 0.0 {
                (g + lam * c.signum()).abs()
            } else {
                (g.abs() - lam).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}
