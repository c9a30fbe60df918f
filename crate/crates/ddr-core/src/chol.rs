//! Minimal dense Cholesky machinery for the regularized kernel systems.
//!
//! Kept in-crate rather than pulling a LAPACK backend: the matrices are SPD by
//! construction, sizes are modest, and the retry policy on factorization
//! failure (diagonal jitter escalating from 1e-10 by factors of 10 up to 1e-6)
//! is part of the solver's contract.

use ndarray::Array2;

use crate::error::{DdrError, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Lower-triangular Cholesky factor, or `None` if a pivot is not strictly
/// positive (matrix not numerically positive definite).
pub(crate) fn cholesky(m: &Array2<f64>) -> Option<Array2<f64>> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d.is_finite() && d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Factorizes `m`, retrying with escalating diagonal jitter when a pivot
/// fails. Returns the factor together with the jitter that was needed.
pub(crate) fn factor_with_jitter(m: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    if let Some(l) = cholesky(m) {
        return Ok((l, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut bumped = m.clone();
        for i in 0..bumped.nrows() {
            bumped[(i, i)] += jitter;
        }
        if let Some(l) = cholesky(&bumped) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(DdrError::IllConditioned {
        max_jitter: JITTER_MAX,
    })
}

/// Explicit inverse from a Cholesky factor: solves `L L^T X = I`.
pub(crate) fn inverse_from_factor(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut col = vec![0.0f64; n];
    for e in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[e] = 1.0;
        solve_in_place(l, &mut col);
        for i in 0..n {
            inv[(i, e)] = col[i];
        }
    }
    inv
}

/// Solves `L L^T x = b` in place (forward then backward substitution).
pub(crate) fn solve_in_place(l: &Array2<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `L L^T X = B` column by column.
pub(crate) fn solve_matrix(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let d = b.ncols();
    let mut x = b.clone();
    let mut col = vec![0.0f64; n];
    for j in 0..d {
        for i in 0..n {
            col[i] = x[(i, j)];
        }
        solve_in_place(l, &mut col);
        for i in 0..n {
            x[(i, j)] = col[i];
        }
    }
    x
}
