//! Kernel evaluations: the Gaussian pulse placed on outcomes, the RBF Gram
//! matrix over covariates, and the median-distance bandwidth heuristic.

use ndarray::{Array1, Array2};

use crate::data::{DeltaMatrix, EvaluationGrid};
use crate::error::{invalid, DdrError, Result};

/// Gaussian pulse of width `h` centered at `y`, evaluated at `z`:
///
/// `(2*pi)^(-1/2) * h^(-1) * exp(-(z - y)^2 / (2 h^2))`
///
/// As `h` shrinks the pulse concentrates at `y` while keeping unit area, so a
/// regression onto these values targets the conditional density itself.
///
/// ```
/// let peak = ddr_core::gaussian_delta(1.0, 1.0, 0.2).unwrap();
/// assert!((peak - 1.9947114020071635).abs() < 1e-12);
/// ```
pub fn gaussian_delta(z: f64, y: f64, h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid(format!("pulse width h must be positive, got {h}")));
    }
    Ok(gaussian_delta_unchecked(z, y, h))
}

#[inline]
pub(crate) fn gaussian_delta_unchecked(z: f64, y: f64, h: f64) -> f64 {
    let u = (z - y) / h;
    (-0.5 * u * u).exp() / ((2.0 * std::f64::consts::PI).sqrt() * h)
}

/// Evaluates the pulse of width `h` centered at each outcome on every grid
/// point. Row `i` is the regression target vector for sample `i`.
pub fn build_delta_matrix(
    outcome: &Array1<f64>,
    grid: &EvaluationGrid,
    h: f64,
) -> Result<DeltaMatrix> {
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid(format!("pulse width h must be positive, got {h}")));
    }
    if outcome.is_empty() {
        return Err(invalid("cannot build a delta matrix from an empty outcome"));
    }
    let n = outcome.len();
    let d = grid.len();
    let mut values = Array2::zeros((n, d));
    let pts = grid.points();
    for (i, &y) in outcome.iter().enumerate() {
        let mut row = values.row_mut(i);
        for (k, &z) in pts.iter().enumerate() {
            row[k] = gaussian_delta_unchecked(z, y, h);
        }
    }
    Ok(DeltaMatrix { values, h })
}

/// Isotropic Gaussian kernel over covariate space with bandwidth `sigma`:
/// `k(a, b) = exp(-||a - b||^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy)]
pub struct RbfKernel {
    bandwidth: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(invalid(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(RbfKernel { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Cross Gram matrix: entry `(i, j)` is `k(a_i, b_j)`.
    pub fn gram(&self, a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
        if a.ncols() != b.ncols() {
            return Err(invalid(format!(
                "covariate dimension mismatch: {} vs {}",
                a.ncols(),
                b.ncols()
            )));
        }
        let inv2s2 = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut out = Array2::zeros((a.nrows(), b.nrows()));
        for (i, ra) in a.rows().into_iter().enumerate() {
            let ra = ra.as_slice().expect("contiguous row");
            for (j, rb) in b.rows().into_iter().enumerate() {
                let rb = rb.as_slice().expect("contiguous row");
                let mut sq = 0.0;
                for (va, vb) in ra.iter().zip(rb) {
                    let dv = va - vb;
                    sq += dv * dv;
                }
                out[(i, j)] = (-sq * inv2s2).exp();
            }
        }
        Ok(out)
    }
}

/// Cross Gram matrix for the Gaussian kernel with bandwidth `sigma`.
///
/// ```
/// # use ndarray::array;
/// let a = array![[0.0], [1.0]];
/// let k = ddr_core::rbf_gram(&a, &a, 1.0).unwrap();
/// assert_eq!(k[(0, 0)], 1.0);
/// assert!((k[(0, 1)] - 0.6065306597126334).abs() < 1e-15);
/// ```
pub fn rbf_gram(a: &Array2<f64>, b: &Array2<f64>, bandwidth: f64) -> Result<Array2<f64>> {
    RbfKernel::new(bandwidth)?.gram(a, b)
}

/// Median of all pairwise Euclidean distances between rows of `x`. With an
/// even count the two middle distances are averaged.
///
/// This is the base bandwidth the tuning grid scales by its sigma
/// multipliers.
pub fn median_heuristic(x: &Array2<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(invalid(format!(
            "median heuristic needs at least 2 rows, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let ri = x.row(i);
        let ri = ri.as_slice().expect("contiguous row");
        for j in (i + 1)..n {
            let rj = x.row(j);
            let rj = rj.as_slice().expect("contiguous row");
            let mut sq = 0.0;
            for (a, b) in ri.iter().zip(rj) {
                let d = a - b;
                sq += d * d;
            }
            dists.push(sq.sqrt());
        }
    }
    if dists.iter().all(|&d| d == 0.0) {
        return Err(DdrError::DegenerateCovariates);
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = dists.len();
    Ok(if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    })
}
