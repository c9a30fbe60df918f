//! Multi-output kernel ridge regression and its closed-form leave-one-out
//! predictions.
//!
//! All outputs share one Gram matrix, so a fit solves `(K + n*lambda*I) A = T`
//! once for an n x d target matrix `T`. Leave-one-out predictions come from
//! the hat-matrix identity rather than n refits: with
//! `H = K (K + n*lambda*I)^-1`,
//!
//! `g_(-i) = (g_i - H_ii * T_i) / (1 - H_ii)`
//!
//! which simplifies to `T_i - W_i / (M^-1)_ii` with `W = M^-1 T`. The deleted
//! fit this reproduces keeps the absolute penalty `n*lambda` fixed at its
//! full-sample value.

use ndarray::Array2;

use crate::chol::{factor_with_jitter, inverse_from_factor, solve_matrix};
use crate::error::{invalid, DdrError, Result};
use crate::kernels::rbf_gram;

/// Leverage values at or above `1 - LEVERAGE_TOL` make the deleted-residual
/// denominator numerically zero.
const LEVERAGE_TOL: f64 = 1e-12;

/// A fitted ridge regression: training rows, dual coefficients, and the
/// kernel/penalty settings that produced them.
#[derive(Debug, Clone)]
pub struct KrrFit {
    pub x_train: Array2<f64>,
    pub dual: Array2<f64>,
    pub bandwidth: f64,
    pub ridge: f64,
}

fn validate_inputs(x: &Array2<f64>, targets: &Array2<f64>, ridge: f64, bandwidth: f64) -> Result<()> {
    if x.nrows() == 0 {
        return Err(invalid("regression needs at least 1 training row"));
    }
    if targets.nrows() != x.nrows() {
        return Err(invalid(format!(
            "target rows {} do not match {} training rows",
            targets.nrows(),
            x.nrows()
        )));
    }
    if !(ridge.is_finite() && ridge > 0.0) {
        return Err(invalid(format!("ridge must be positive, got {ridge}")));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if x.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(invalid("regression inputs contain a non-finite value"));
    }
    Ok(())
}

/// Solves `(K + n*lambda*I) A = T` for the dual coefficients.
pub fn krr_fit(
    x: &Array2<f64>,
    targets: &Array2<f64>,
    ridge: f64,
    bandwidth: f64,
) -> Result<KrrFit> {
    validate_inputs(x, targets, ridge, bandwidth)?;
    let n = x.nrows();
    let mut m = rbf_gram(x, x, bandwidth)?;
    let c = n as f64 * ridge;
    for i in 0..n {
        m[(i, i)] += c;
    }
    let (l, _jitter) = factor_with_jitter(&m)?;
    let dual = solve_matrix(&l, targets);
    Ok(KrrFit {
        x_train: x.clone(),
        dual,
        bandwidth,
        ridge,
    })
}

/// Predicts target rows for query covariates: `K(Xq, Xtrain) A`.
pub fn krr_predict(fit: &KrrFit, xq: &Array2<f64>) -> Result<Array2<f64>> {
    if xq.ncols() != fit.x_train.ncols() {
        return Err(invalid(format!(
            "query dimension {} does not match training dimension {}",
            xq.ncols(),
            fit.x_train.ncols()
        )));
    }
    if xq.iter().any(|v| !v.is_finite()) {
        return Err(invalid("query covariates contain a non-finite value"));
    }
    let g = rbf_gram(xq, &fit.x_train, fit.bandwidth)?;
    Ok(g.dot(&fit.dual))
}

/// One factorized ridge system, reusable across target matrices. This is what
/// makes the hyperparameter sweep cheap: the expensive inverse depends only on
/// (x, ridge, bandwidth), while each pulse width swaps in a new target matrix.
pub(crate) struct RidgeSystem {
    inv: Array2<f64>,
    invdiag: Vec<f64>,
    c: f64,
}

impl RidgeSystem {
    pub(crate) fn new(x: &Array2<f64>, ridge: f64, bandwidth: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge > 0.0) {
            return Err(invalid(format!("ridge must be positive, got {ridge}")));
        }
        let n = x.nrows();
        let mut m = rbf_gram(x, x, bandwidth)?;
        let c = n as f64 * ridge;
        for i in 0..n {
            m[(i, i)] += c;
        }
        let (l, _jitter) = factor_with_jitter(&m)?;
        let inv = inverse_from_factor(&l);
        let invdiag = (0..n).map(|i| inv[(i, i)]).collect();
        Ok(RidgeSystem { inv, invdiag, c })
    }

    /// Leverage `H_ii = 1 - c * (M^-1)_ii` for each training row.
    pub(crate) fn leverages(&self) -> impl Iterator<Item = f64> + '_ {
        self.invdiag.iter().map(move |&v| 1.0 - self.c * v)
    }

    /// Errors if any leverage saturates (deleted residual would divide by 0).
    pub(crate) fn check_leverages(&self) -> Result<()> {
        for (i, lev) in self.leverages().enumerate() {
            if lev >= 1.0 - LEVERAGE_TOL {
                return Err(DdrError::LeverageSaturation {
                    index: i,
                    leverage: lev,
                });
            }
        }
        Ok(())
    }

    /// Leave-one-out predictions via the hat-matrix identity.
    pub(crate) fn loo(&self, targets: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_leverages()?;
        let w = self.inv.dot(targets);
        let mut loo = targets.clone();
        for (i, mut row) in loo.rows_mut().into_iter().enumerate() {
            let scale = 1.0 / self.invdiag[i];
            for (v, wv) in row.iter_mut().zip(w.row(i)) {
                *v -= wv * scale;
            }
        }
        Ok(loo)
    }
}

/// Leave-one-out predictions for every training row at once, via the
/// hat-matrix identity. Row `i` equals the prediction at `x_i` of a model fit
/// on the other n-1 rows with the absolute penalty `n*lambda` held fixed.
///
/// Errors with "leverage saturation" when any `H_ii >= 1 - 1e-12`.
pub fn krr_loo(
    x: &Array2<f64>,
    targets: &Array2<f64>,
    ridge: f64,
    bandwidth: f64,
) -> Result<Array2<f64>> {
    validate_inputs(x, targets, ridge, bandwidth)?;
    if x.nrows() < 3 {
        return Err(invalid(format!(
            "leave-one-out needs at least 3 rows, got {}",
            x.nrows()
        )));
    }
    RidgeSystem::new(x, ridge, bandwidth)?.loo(targets)
}
