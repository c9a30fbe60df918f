//! Testing layer on top of the fitted densities: a sup-CDF permutation test
//! between treatment arms, a slope-equality z-test, an unconditional Gaussian
//! KDE tuned by unbiased cross-validation, and the Welch t-test.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal as NormalDist, StudentsT};

use crate::data::{Dataset, DdrModel, DensityEstimate, EvaluationGrid};
use crate::ddr::{fit_arm_with_params, normalize_density, predict_with_arm};
use crate::error::{invalid, DdrError, Result};
use crate::loss::interp_density;
use crate::synth::derive_seed;

const SQRT_2PI: f64 = 2.5066282746310002;

/// Cumulative trapezoidal integral of a density along its grid.
///
/// For a normalized estimate the result starts at 0, is nondecreasing, and
/// ends at 1 up to integration error.
pub fn conditional_cdf(est: &DensityEstimate) -> Array1<f64> {
    let pts = est.grid.points();
    let v = &est.values;
    let mut cdf = Array1::zeros(v.len());
    for k in 1..v.len() {
        cdf[k] = cdf[k - 1] + 0.5 * (v[k] + v[k - 1]) * (pts[k] - pts[k - 1]);
    }
    cdf
}

/// The supremum over the grid of CDF(est1) - CDF(est0).
///
/// Signed and one-sided: positive values mean `est1` piles mass at lower
/// outcomes than `est0`. When the grids differ, `est0` is linearly
/// re-interpolated onto `est1`'s grid first.
pub fn sup_cdf_statistic(est1: &DensityEstimate, est0: &DensityEstimate) -> f64 {
    let same_grid = est0.grid.len() == est1.grid.len()
        && est0.grid.start() == est1.grid.start()
        && est0.grid.end() == est1.grid.end();
    let f1 = conditional_cdf(est1);
    let f0 = if same_grid {
        conditional_cdf(est0)
    } else {
        let values = Array1::from_shape_fn(est1.grid.len(), |k| {
            interp_density(&est0.values.view(), &est0.grid, est1.grid.points()[k])
        });
        conditional_cdf(&DensityEstimate {
            grid: est1.grid.clone(),
            values,
            normalized: est0.normalized,
        })
    };
    f1.iter()
        .zip(f0.iter())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Result of the two-arm permutation test.
#[derive(Debug, Clone, Serialize)]
pub struct PermutationTestResult {
    /// Observed sup-CDF statistic (arm 1 CDF minus arm 0 CDF).
    pub statistic: f64,
    /// Add-one permutation p-value, always in (0, 1].
    pub p_value: f64,
    /// Number of permutations.
    pub b: usize,
    /// Master seed the permutations were derived from.
    pub seed: u64,
    /// Per-permutation statistics in permutation-index order.
    pub permuted_statistics: Vec<f64>,
}

fn arm_subset(
    x: &Array2<f64>,
    y: &Array1<f64>,
    labels: &[&str],
    arm: &str,
) -> (Array2<f64>, Array1<f64>) {
    let rows: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == arm)
        .map(|(i, _)| i)
        .collect();
    let mut xs = Array2::zeros((rows.len(), x.ncols()));
    let mut ys = Array1::zeros(rows.len());
    for (k, &i) in rows.iter().enumerate() {
        xs.row_mut(k).assign(&x.row(i));
        ys[k] = y[i];
    }
    (xs, ys)
}

/// Permutation test of distributional equality between two arms at a query
/// point, using the sup-CDF statistic.
///
/// The observed statistic compares the fitted model's predictions at `query`.
/// Each permutation shuffles the treatment labels, refits both arms with the
/// observed arms' hyperparameters held fixed (only dual coefficients,
/// standardization, and grids are recomputed), and recomputes the statistic.
/// The p-value is (1 + #{S_b >= S_obs}) / (B + 1). Permutations run in
/// parallel with seeds derived per index, so results are deterministic.
pub fn permutation_test(
    dataset: &Dataset,
    model: &DdrModel,
    arm0: &str,
    arm1: &str,
    query: &ArrayView1<f64>,
    b: usize,
    seed: u64,
) -> Result<PermutationTestResult> {
    if b < 19 {
        return Err(DdrError::InsufficientPermutations(b));
    }
    if arm0 == arm1 {
        return Err(invalid(format!("the two arms must differ, both are '{arm0}'")));
    }
    let labels = dataset
        .treatment()
        .ok_or_else(|| invalid("permutation test needs a dataset with a treatment column"))?;
    let arm_labels = dataset.arm_labels();
    if arm_labels.len() != 2 {
        return Err(invalid(format!(
            "permutation test needs exactly two arms, dataset has {}",
            arm_labels.len()
        )));
    }
    dataset.arm_rows(arm0)?;
    dataset.arm_rows(arm1)?;
    if query.len() != dataset.p() {
        return Err(invalid(format!(
            "query dimension {} does not match dataset dimension {}",
            query.len(),
            dataset.p()
        )));
    }
    let model0 = model.arm(arm0)?;
    let model1 = model.arm(arm1)?;

    let xq = query.to_owned().insert_axis(Axis(0));
    let est1 = predict_with_arm(model1, &xq)?.remove(0);
    let est0 = predict_with_arm(model0, &xq)?.remove(0);
    let statistic = sup_cdf_statistic(&est1, &est0);

    let x = dataset.covariates();
    let y = dataset.outcome();
    let params0 = model0.params;
    let params1 = model1.params;
    let d0 = model0.grid.len();
    let d1 = model1.grid.len();
    let permuted: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[bi as u64]));
            let mut shuffled: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
            shuffled.shuffle(&mut rng);
            let (x0, y0) = arm_subset(x, y, &shuffled, arm0);
            let (x1, y1) = arm_subset(x, y, &shuffled, arm1);
            let refit0 = fit_arm_with_params(&x0, &y0, d0, params0)?;
            let refit1 = fit_arm_with_params(&x1, &y1, d1, params1)?;
            let e1 = predict_with_arm(&refit1, &xq)?.remove(0);
            let e0 = predict_with_arm(&refit0, &xq)?.remove(0);
            Ok(sup_cdf_statistic(&e1, &e0))
        })
        .collect();
    let mut permuted_statistics = Vec::with_capacity(b);
    for s in permuted {
        permuted_statistics.push(s?);
    }
    let count = permuted_statistics
        .iter()
        .filter(|&&s| s >= statistic)
        .count();
    let p_value = (1 + count) as f64 / (b + 1) as f64;
    Ok(PermutationTestResult {
        statistic,
        p_value,
        b,
        seed,
        permuted_statistics,
    })
}

/// Result of the slope-equality z-test.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeTestResult {
    pub slope1: f64,
    pub slope0: f64,
    pub se1: f64,
    pub se0: f64,
    pub z: f64,
    /// One-sided p-value, the standard normal CDF at z.
    pub p_value: f64,
}

fn ols_slope(x: &Array1<f64>, y: &Array1<f64>, what: &str) -> Result<(f64, f64)> {
    let n = x.len();
    if n != y.len() {
        return Err(invalid(format!(
            "{what} has {n} covariate values but {} outcomes",
            y.len()
        )));
    }
    if n < 3 {
        return Err(invalid(format!(
            "{what} needs at least 3 points for a slope standard error, got {n}"
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what} contains a non-finite value")));
    }
    let mx = x.mean().expect("nonempty");
    let my = y.mean().expect("nonempty");
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if sxx <= 0.0 {
        return Err(invalid(format!("{what} has zero covariate variance")));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            r * r
        })
        .sum();
    let se = (rss / (n - 2) as f64 / sxx).sqrt();
    Ok((slope, se))
}

/// Tests equality of simple least-squares slopes between two arms.
///
/// z = (slope1 - slope0) / sqrt(SE1^2 + SE0^2), with the one-sided p-value
/// Phi(z). Noiseless arms make both standard errors zero and the statistic
/// undefined, which is reported as an error.
pub fn slope_equality_test(
    x1: &Array1<f64>,
    y1: &Array1<f64>,
    x0: &Array1<f64>,
    y0: &Array1<f64>,
) -> Result<SlopeTestResult> {
    let (slope1, se1) = ols_slope(x1, y1, "arm 1")?;
    let (slope0, se0) = ols_slope(x0, y0, "arm 0")?;
    let denom = (se1 * se1 + se0 * se0).sqrt();
    if denom == 0.0 {
        return Err(DdrError::DegenerateStandardError(
            "both arm slope standard errors are zero".to_string(),
        ));
    }
    let z = (slope1 - slope0) / denom;
    let normal = NormalDist::new(0.0, 1.0).expect("valid normal");
    Ok(SlopeTestResult {
        slope1,
        slope0,
        se1,
        se0,
        z,
        p_value: normal.cdf(z),
    })
}

/// One scored bandwidth candidate from the unbiased CV search.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UcvSample {
    pub bandwidth: f64,
    pub ucv: f64,
}

/// An unconditional KDE fit.
#[derive(Debug, Clone, Serialize)]
pub struct KdeFit {
    /// Normalized density on the requested grid.
    pub estimate: DensityEstimate,
    /// Selected bandwidth (argmin of the recorded curve; ties take the
    /// smaller candidate).
    pub bandwidth: f64,
    /// The full criterion curve in ascending bandwidth order.
    pub ucv_curve: Vec<UcvSample>,
}

/// Gaussian-kernel KDE with the bandwidth chosen by unbiased cross-validation.
///
/// The criterion UCV(b) = integral of the squared estimate minus (2/n) times
/// the sum of leave-one-out estimates at the sample points, both in closed
/// form. Candidates are 30 log-spaced bandwidths from 0.05 to 2 times the
/// sample standard deviation.
pub fn kde_ucv(sample: &Array1<f64>, grid: &EvaluationGrid) -> Result<KdeFit> {
    let n = sample.len();
    if n < 2 {
        return Err(invalid(format!(
            "kde needs at least 2 samples, got {n}"
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(invalid("kde sample contains a non-finite value"));
    }
    let mean = sample.mean().expect("nonempty");
    let var = sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(DdrError::DegenerateOutcome(sd));
    }

    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push((sample[i] - sample[j]).abs());
        }
    }

    let lo = (0.05 * sd).ln();
    let hi = (2.0 * sd).ln();
    let count = 30;
    let nf = n as f64;
    let mut curve = Vec::with_capacity(count);
    let mut best: Option<(f64, f64)> = None;
    for k in 0..count {
        let b = (lo + (hi - lo) * k as f64 / (count - 1) as f64).exp();
        let wide = std::f64::consts::SQRT_2 * b;
        let mut sum_sq = 0.0;
        let mut sum_loo = 0.0;
        for &d in &dists {
            sum_sq += (-0.5 * (d / wide) * (d / wide)).exp();
            sum_loo += (-0.5 * (d / b) * (d / b)).exp();
        }
        let integral_sq = (nf + 2.0 * sum_sq) / (nf * nf * wide * SQRT_2PI);
        let cross = 4.0 * sum_loo / (nf * (nf - 1.0) * b * SQRT_2PI);
        let ucv = integral_sq - cross;
        curve.push(UcvSample { bandwidth: b, ucv });
        if best.map(|(_, bu)| ucv < bu).unwrap_or(true) {
            best = Some((b, ucv));
        }
    }
    let (bandwidth, _) = best.expect("nonempty candidate list");

    let pts = grid.points();
    let values = Array1::from_shape_fn(grid.len(), |k| {
        let z = pts[k];
        sample
            .iter()
            .map(|&yi| (-0.5 * ((z - yi) / bandwidth) * ((z - yi) / bandwidth)).exp())
            .sum::<f64>()
            / (nf * bandwidth * SQRT_2PI)
    });
    let (estimate, _) = normalize_density(&values.view(), grid)?;
    Ok(KdeFit {
        estimate,
        bandwidth,
        ucv_curve: curve,
    })
}

/// Result of the Welch two-sample t-test.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WelchResult {
    pub t: f64,
    /// Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

fn mean_var(sample: &Array1<f64>, what: &str) -> Result<(f64, f64, f64)> {
    let n = sample.len();
    if n < 2 {
        return Err(invalid(format!("{what} needs at least 2 values, got {n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what} contains a non-finite value")));
    }
    let mean = sample.mean().expect("nonempty");
    let var = sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, var, n as f64))
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom.
pub fn welch_t_test(sample1: &Array1<f64>, sample0: &Array1<f64>) -> Result<WelchResult> {
    let (m1, v1, n1) = mean_var(sample1, "sample 1")?;
    let (m0, v0, n0) = mean_var(sample0, "sample 0")?;
    let a1 = v1 / n1;
    let a0 = v0 / n0;
    if a1 + a0 == 0.0 {
        return Err(DdrError::DegenerateStandardError(
            "both sample variances are zero".to_string(),
        ));
    }
    let t = (m1 - m0) / (a1 + a0).sqrt();
    let df = (a1 + a0) * (a1 + a0) / (a1 * a1 / (n1 - 1.0) + a0 * a0 / (n0 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| invalid(format!("t distribution with df = {df}: {e}")))?;
    let p_value = 2.0 * dist.cdf(-t.abs());
    Ok(WelchResult { t, df, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_grid;
    use crate::ddr::{ddr_fit, HyperparameterGrid};
    use ndarray::array;
    use rand::Rng;

    fn uniform_grid(d: usize) -> EvaluationGrid {
        let pts = Array1::from_shape_fn(d, |k| k as f64 / (d - 1) as f64);
        let spacing = 1.0 / (d - 1) as f64;
        EvaluationGrid::new(pts, spacing).unwrap()
    }

    fn estimate(grid: &EvaluationGrid, values: Array1<f64>) -> DensityEstimate {
        let (est, _) = normalize_density(&values.view(), grid).unwrap();
        est
    }

    #[test]
    fn cdf_of_uniform_is_linear() {
        let grid = EvaluationGrid::new(array![0.0, 0.5, 1.0], 0.5).unwrap();
        let est = estimate(&grid, array![1.0, 1.0, 1.0]);
        let cdf = conditional_cdf(&est);
        assert_eq!(cdf[0], 0.0);
        assert!((cdf[1] - 0.5).abs() < 1e-15);
        assert!((cdf[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cdf_of_triangle_hits_half_at_the_peak() {
        let grid = EvaluationGrid::new(array![0.0, 0.5, 1.0], 0.5).unwrap();
        let est = estimate(&grid, array![0.0, 2.0, 0.0]);
        let cdf = conditional_cdf(&est);
        assert!((cdf[1] - 0.5).abs() < 1e-15);
        assert!((cdf[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let grid = uniform_grid(101);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = Array1::from_shape_fn(101, |_| rng.random::<f64>());
        let est = estimate(&grid, raw);
        let cdf = conditional_cdf(&est);
        for w in cdf.as_slice().unwrap().windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!((cdf[100] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_estimates_score_zero() {
        let grid = uniform_grid(11);
        let est = estimate(&grid, Array1::from_shape_fn(11, |k| 1.0 + k as f64));
        assert_eq!(sup_cdf_statistic(&est, &est), 0.0);
    }

    #[test]
    fn fully_separated_supports_score_one() {
        let grid = uniform_grid(11);
        let mut low = Array1::zeros(11);
        low[1] = 10.0;
        let mut high = Array1::zeros(11);
        high[9] = 10.0;
        let est_low = estimate(&grid, low);
        let est_high = estimate(&grid, high);
        let s = sup_cdf_statistic(&est_low, &est_high);
        assert!((s - 1.0).abs() < 1e-12, "s = {s}");
        // Swapped, the difference is nonpositive everywhere and zero at the
        // grid start, so the supremum is 0, not -1.
        let swapped = sup_cdf_statistic(&est_high, &est_low);
        assert!(swapped.abs() < 1e-12, "swapped = {swapped}");
    }

    #[test]
    fn asymmetric_pair_matches_brute_force_scan() {
        let grid = uniform_grid(21);
        let a = estimate(
            &grid,
            Array1::from_shape_fn(21, |k| if k < 5 { 3.0 } else { 0.2 }),
        );
        let b = estimate(
            &grid,
            Array1::from_shape_fn(21, |k| (k as f64 / 20.0).powi(2) + 0.1),
        );
        let fa = conditional_cdf(&a);
        let fb = conditional_cdf(&b);
        let brute_max = fa
            .iter()
            .zip(fb.iter())
            .map(|(x, y)| x - y)
            .fold(f64::NEG_INFINITY, f64::max);
        let brute_min = fa
            .iter()
            .zip(fb.iter())
            .map(|(x, y)| x - y)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sup_cdf_statistic(&a, &b), brute_max);
        assert_eq!(sup_cdf_statistic(&b, &a), -brute_min);
    }

    #[test]
    fn grid_mismatch_reinterpolates_before_comparing() {
        let coarse = uniform_grid(5);
        let fine = uniform_grid(41);
        let flat_coarse = estimate(&coarse, Array1::ones(5));
        let flat_fine = estimate(&fine, Array1::ones(41));
        let s = sup_cdf_statistic(&flat_fine, &flat_coarse);
        assert!(s.abs() < 1e-12, "s = {s}");
    }

    fn separated_two_arm_dataset() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 16;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let mut y = Array1::zeros(n);
        let mut labels = Vec::new();
        for i in 0..n {
            if i % 2 == 0 {
                y[i] = 5.0 + 0.3 * (rng.random::<f64>() - 0.5);
                labels.push("ctrl".to_string());
            } else {
                y[i] = -5.0 + 0.3 * (rng.random::<f64>() - 0.5);
                labels.push("trt".to_string());
            }
        }
        Dataset::new(x, y, Some(labels)).unwrap()
    }

    fn small_hpgrid() -> HyperparameterGrid {
        HyperparameterGrid {
            h_values: vec![0.2, 0.4],
            ridge_values: vec![1e-2, 1e-4],
            sigma_multipliers: vec![1.1],
            eta_candidate_count: 3,
        }
    }

    #[test]
    fn separated_arms_give_the_smallest_possible_p() {
        let ds = separated_two_arm_dataset();
        let fitted = ddr_fit(&ds, 30, &small_hpgrid()).unwrap();
        let query = array![0.0, 0.0];
        let result = permutation_test(
            &ds,
            &fitted.model,
            "ctrl",
            "trt",
            &query.view(),
            19,
            77,
        )
        .unwrap();
        // trt outcomes sit far below ctrl, so the observed statistic is near
        // its maximum and no label shuffle reaches it.
        assert!(result.statistic > 0.9, "statistic {}", result.statistic);
        assert_eq!(result.permuted_statistics.len(), 19);
        assert!((result.p_value - 0.05).abs() < 1e-12);
        let again = permutation_test(
            &ds,
            &fitted.model,
            "ctrl",
            "trt",
            &query.view(),
            19,
            77,
        )
        .unwrap();
        assert_eq!(result.p_value, again.p_value);
        for (a, b) in result
            .permuted_statistics
            .iter()
            .zip(&again.permuted_statistics)
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn too_few_permutations_error() {
        let ds = separated_two_arm_dataset();
        let fitted = ddr_fit(&ds, 30, &small_hpgrid()).unwrap();
        let query = array![0.0, 0.0];
        let err = permutation_test(&ds, &fitted.model, "ctrl", "trt", &query.view(), 18, 0)
            .unwrap_err();
        assert_eq!(err.code(), "insufficient_permutations");
        let err = permutation_test(&ds, &fitted.model, "trt", "trt", &query.view(), 19, 0)
            .unwrap_err();
        assert_eq!(err.code(), "invalid_input");
    }

    #[test]
    fn identical_arms_give_zero_slope_z() {
        let x = array![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = array![0.1, 1.2, 1.9, 3.3, 3.8];
        let r = slope_equality_test(&x, &y, &x, &y).unwrap();
        assert_eq!(r.z, 0.0);
        assert!((r.p_value - 0.5).abs() < 1e-15);
        assert_eq!(r.slope1, r.slope0);
    }

    #[test]
    fn noiseless_arms_have_undefined_z() {
        let x = array![0.0, 1.0, 2.0];
        let up = array![0.0, 1.0, 2.0];
        let down = array![0.0, -1.0, -2.0];
        let err = slope_equality_test(&x, &up, &x, &down).unwrap_err();
        assert_eq!(err.code(), "degenerate_standard_error");
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let x = array![1.0, 1.0, 1.0];
        let y = array![0.0, 1.0, 2.0];
        assert!(slope_equality_test(&x, &y, &x, &y).is_err());
    }

    #[test]
    fn slope_and_se_match_direct_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 40;
        let x = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 4.0);
        let y = Array1::from_shape_fn(n, |i| 2.0 * x[i] + 1.0 + (rng.random::<f64>() - 0.5));
        let x0 = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 4.0);
        let y0 = Array1::from_shape_fn(n, |i| -1.0 * x0[i] + (rng.random::<f64>() - 0.5));
        let r = slope_equality_test(&x, &y, &x0, &y0).unwrap();

        let check = |xs: &Array1<f64>, ys: &Array1<f64>| {
            let nf = xs.len() as f64;
            let sx: f64 = xs.sum();
            let sy: f64 = ys.sum();
            let sxx: f64 = xs.iter().map(|v| v * v).sum();
            let sxy: f64 = xs.iter().zip(ys.iter()).map(|(a, b)| a * b).sum();
            let slope = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
            let intercept = (sy - slope * sx) / nf;
            let rss: f64 = xs
                .iter()
                .zip(ys.iter())
                .map(|(a, b)| (b - intercept - slope * a).powi(2))
                .sum();
            let se = (rss / (nf - 2.0) / (sxx - sx * sx / nf)).sqrt();
            (slope, se)
        };
        let (s1, e1) = check(&x, &y);
        let (s0, e0) = check(&x0, &y0);
        assert!((r.slope1 - s1).abs() < 1e-10);
        assert!((r.se1 - e1).abs() < 1e-10);
        assert!((r.slope0 - s0).abs() < 1e-10);
        assert!((r.se0 - e0).abs() < 1e-10);
        let z = (s1 - s0) / (e1 * e1 + e0 * e0).sqrt();
        assert!((r.z - z).abs() < 1e-10);
    }

    #[test]
    fn kde_of_a_symmetric_sample_is_symmetric() {
        let sample = array![-1.0, 1.0];
        let grid = make_grid(&array![-2.0, 2.0], 81).unwrap();
        let fit = kde_ucv(&sample, &grid).unwrap();
        let v = &fit.estimate.values;
        for k in 0..81 {
            assert!((v[k] - v[80 - k]).abs() < 1e-10);
        }
    }

    #[test]
    fn kde_rejects_degenerate_samples() {
        let grid = make_grid(&array![-1.0, 1.0], 11).unwrap();
        assert_eq!(
            kde_ucv(&array![2.0, 2.0, 2.0], &grid).unwrap_err().code(),
            "degenerate_outcome"
        );
        assert!(kde_ucv(&array![1.0], &grid).is_err());
    }

    #[test]
    fn kde_bandwidth_minimizes_its_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sample = Array1::from_shape_fn(60, |_| rng.random::<f64>() * 3.0 - 1.5);
        let grid = make_grid(&sample, 101).unwrap();
        let fit = kde_ucv(&sample, &grid).unwrap();
        let min = fit
            .ucv_curve
            .iter()
            .map(|s| s.ucv)
            .fold(f64::INFINITY, f64::min);
        let at_selected = fit
            .ucv_curve
            .iter()
            .find(|s| s.bandwidth == fit.bandwidth)
            .unwrap();
        assert_eq!(at_selected.ucv, min);
        assert_eq!(fit.ucv_curve.len(), 30);
        for w in fit.ucv_curve.windows(2) {
            assert!(w[1].bandwidth > w[0].bandwidth);
        }
        assert!((fit.estimate.auc() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kde_recovers_the_standard_normal_peak() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sample = Array1::from_shape_fn(1000, |_| normal.sample(&mut rng));
        let grid = make_grid(&sample, 501).unwrap();
        let fit = kde_ucv(&sample, &grid).unwrap();
        let at_zero = fit.estimate.value_at(0.0);
        assert!(
            (at_zero - 0.3989422804014327).abs() < 0.05,
            "density at 0: {at_zero}"
        );
    }

    #[test]
    fn welch_is_zero_on_identical_samples() {
        let s = array![0.0, 1.0, 2.0];
        let r = welch_t_test(&s, &s).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn welch_rejects_two_constant_samples() {
        let err = welch_t_test(&array![1.0, 1.0], &array![2.0, 2.0]).unwrap_err();
        assert_eq!(err.code(), "degenerate_standard_error");
        // One degenerate sample is fine; the other supplies the variance.
        let r = welch_t_test(&array![1.0, 1.0], &array![2.0, 3.0]).unwrap();
        assert!(r.t.is_finite());
    }

    #[test]
    fn welch_matches_a_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let s1 = Array1::from_shape_fn(25, |_| rng.random::<f64>() * 2.0 + 0.4);
        let s0 = Array1::from_shape_fn(18, |_| rng.random::<f64>() * 3.0);
        let r = welch_t_test(&s1, &s0).unwrap();

        let stats = |s: &Array1<f64>| {
            let nf = s.len() as f64;
            let m = s.sum() / nf;
            let v = s.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / (nf - 1.0);
            (m, v, nf)
        };
        let (m1, v1, n1) = stats(&s1);
        let (m0, v0, n0) = stats(&s0);
        let t = (m1 - m0) / (v1 / n1 + v0 / n0).sqrt();
        let df = (v1 / n1 + v0 / n0).powi(2)
            / ((v1 / n1).powi(2) / (n1 - 1.0) + (v0 / n0).powi(2) / (n0 - 1.0));
        assert!((r.t - t).abs() < 1e-10);
        assert!((r.df - df).abs() < 1e-10);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}
