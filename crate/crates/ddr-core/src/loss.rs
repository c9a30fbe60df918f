//! Loss machinery: trapezoid integration on evaluation grids, linear
//! interpolation of gridded curves, and the two mean integrated squared error
//! criteria.
//!
//! The empirical criterion scores a matrix of held-out estimates without
//! knowing the truth:
//!
//! `(1/n) sum_i integral(g_i^2) - (2/n) sum_i g_i(y_i)`
//!
//! which estimates the integrated squared error up to a constant that does not
//! depend on the estimator. The oracle criterion integrates the squared
//! difference against a known density and is only available in synthetic
//! studies.

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::data::{DensityEstimate, EvaluationGrid};
use crate::error::{invalid, Result};

/// A scalar loss. Finite by construction of the functions that produce it.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct LossValue(pub f64);

impl LossValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Linear interpolation of grid values at `z`, with value 0 outside the grid
/// span. Exact at the knots. The values pass through signed: clipping is the
/// normalizer's job, and the empirical criterion needs raw regression outputs.
pub fn interp_density(values: &ArrayView1<f64>, grid: &EvaluationGrid, z: f64) -> f64 {
    let pts = grid.points();
    let d = pts.len();
    debug_assert_eq!(values.len(), d);
    if !z.is_finite() || z < pts[0] || z > pts[d - 1] {
        return 0.0;
    }
    let offset = (z - pts[0]) / grid.spacing();
    let nearest = offset.round() as usize;
    if nearest < d && pts[nearest] == z {
        return values[nearest];
    }
    let k = (offset.floor() as usize).min(d - 2);
    let t = (z - pts[k]) / (pts[k + 1] - pts[k]);
    values[k] * (1.0 - t) + values[k + 1] * t
}

/// Trapezoid-rule integral of grid values over the grid span. Signed values
/// integrate with their sign.
///
/// ```
/// # use ndarray::array;
/// let grid = ddr_core::EvaluationGrid::new(array![0.0, 1.0, 2.0], 1.0).unwrap();
/// assert_eq!(ddr_core::trapezoid_auc(&array![0.0, 1.0, 0.0].view(), &grid), 1.0);
/// assert_eq!(ddr_core::trapezoid_auc(&array![-1.0, 2.0, 2.0].view(), &grid), 2.5);
/// ```
pub fn trapezoid_auc(values: &ArrayView1<f64>, grid: &EvaluationGrid) -> f64 {
    let pts = grid.points();
    debug_assert_eq!(values.len(), pts.len());
    let mut auc = 0.0;
    for j in 0..pts.len() - 1 {
        auc += 0.5 * (values[j] + values[j + 1]) * (pts[j + 1] - pts[j]);
    }
    auc
}

fn trapezoid_of_squares(values: &ArrayView1<f64>, grid: &EvaluationGrid) -> f64 {
    let pts = grid.points();
    let mut auc = 0.0;
    for j in 0..pts.len() - 1 {
        auc += 0.5 * (values[j] * values[j] + values[j + 1] * values[j + 1]) * (pts[j + 1] - pts[j]);
    }
    auc
}

/// Empirical integrated-squared-error surrogate of a held-out estimate matrix.
///
/// Row `i` of `estimates` is an out-of-sample density estimate for sample `i`,
/// on `grid`; `outcome[i]` is where that sample actually landed. Squares are
/// taken at the knots before integrating, and estimates at outcomes outside
/// the grid span contribute zero to the cross term.
pub fn empirical_mise(
    estimates: &Array2<f64>,
    outcome: &Array1<f64>,
    grid: &EvaluationGrid,
) -> Result<LossValue> {
    let n = estimates.nrows();
    if n == 0 {
        return Err(invalid("empirical criterion needs at least one row"));
    }
    if outcome.len() != n {
        return Err(invalid(format!(
            "outcome length {} does not match {} estimate rows",
            outcome.len(),
            n
        )));
    }
    if estimates.ncols() != grid.len() {
        return Err(invalid(format!(
            "estimate columns {} do not match grid size {}",
            estimates.ncols(),
            grid.len()
        )));
    }
    let mut sq_term = 0.0;
    let mut cross_term = 0.0;
    for (row, &y) in estimates.rows().into_iter().zip(outcome.iter()) {
        sq_term += trapezoid_of_squares(&row, grid);
        cross_term += interp_density(&row, grid, y);
    }
    let nf = n as f64;
    let value = sq_term / nf - 2.0 * cross_term / nf;
    if !value.is_finite() {
        return Err(invalid(format!("empirical criterion is not finite: {value}")));
    }
    Ok(LossValue(value))
}

/// Oracle mean integrated squared error over a covariate sample.
///
/// `model_density` maps a covariate row to estimate values on `grid`;
/// `oracle` is the true conditional density evaluated at (z, x). The squared
/// difference is taken at the knots and integrated by the trapezoid rule,
/// then averaged over the rows of `x_samples`.
pub fn true_mise<F, G>(
    mut model_density: F,
    oracle: G,
    x_samples: &Array2<f64>,
    grid: &EvaluationGrid,
) -> Result<f64>
where
    F: FnMut(ArrayView1<f64>) -> Array1<f64>,
    G: Fn(f64, ArrayView1<f64>) -> f64,
{
    let m = x_samples.nrows();
    if m == 0 {
        return Err(invalid("oracle criterion needs at least one covariate row"));
    }
    let pts = grid.points();
    let d = pts.len();
    let mut total = 0.0;
    let mut diff = Array1::zeros(d);
    for x in x_samples.rows() {
        let est = model_density(x);
        if est.len() != d {
            return Err(invalid(format!(
                "model density returned {} values for a {}-point grid",
                est.len(),
                d
            )));
        }
        for k in 0..d {
            diff[k] = est[k] - oracle(pts[k], x);
        }
        total += trapezoid_of_squares(&diff.view(), grid);
    }
    let value = total / m as f64;
    if !value.is_finite() {
        return Err(invalid(format!("oracle criterion is not finite: {value}")));
    }
    Ok(value)
}

impl DensityEstimate {
    /// Trapezoid-rule area under the estimate.
    pub fn auc(&self) -> f64 {
        trapezoid_auc(&self.values.view(), &self.grid)
    }

    /// Linear interpolation of the estimate at `z` (0 outside the grid).
    pub fn value_at(&self, z: f64) -> f64 {
        interp_density(&self.values.view(), &self.grid, z)
    }
}
