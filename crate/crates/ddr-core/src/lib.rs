//! Nonparametric conditional density estimation by regressing pulse-encoded
//! outcomes on covariates.
//!
//! The estimator turns each outcome value into a narrow Gaussian pulse
//! delta_h(z - y_i) evaluated on a fixed grid, regresses those pulses on the
//! covariates with multi-output kernel ridge regression, and post-processes
//! the regression output into a proper density (clip, renormalize, sharpen).
//! As the pulse width h shrinks the targets approach point masses at the
//! observed outcomes, and the regression's conditional expectation approaches
//! the conditional density itself. Pulse width, ridge penalty, kernel
//! bandwidth, and the sharpening threshold are all tuned by exact
//! leave-one-out cross-validation against an integrated-squared-error
//! surrogate that never needs the true density.
//!
//! Around the core estimator the crate provides per-treatment-arm fitting, a
//! sup-CDF permutation test and a slope-equality z-test ([`inference`]), an
//! unconditional KDE baseline with unbiased cross-validation, and four
//! synthetic generative models with analytic densities plus a replication
//! harness ([`synth`]).
//!
//! # Quick start
//!
//! ```
//! use ddr_core::{ddr_fit, ddr_predict, Dataset, DdrModel, HyperparameterGrid};
//! use ndarray::{Array1, Array2};
//!
//! // Outcome tracks the first covariate.
//! let n = 24;
//! let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
//! let y = Array1::from_shape_fn(n, |i| x[(i, 0)] + 0.05 * ((i % 5) as f64 - 2.0));
//! let data = Dataset::new(x, y, None)?;
//!
//! let grid = HyperparameterGrid {
//!     h_values: vec![0.1, 0.2],
//!     ridge_values: vec![1e-2, 1e-4],
//!     sigma_multipliers: vec![1.1],
//!     eta_candidate_count: 4,
//! };
//! let fitted = ddr_fit(&data, 50, &grid)?;
//! let query = Array2::from_shape_vec((1, 2), vec![0.0, 0.0])?;
//! let density = ddr_predict(&fitted.model, DdrModel::SINGLE_ARM, &query)?.remove(0);
//! assert!((density.auc() - 1.0).abs() < 1e-6);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

mod chol;
pub mod data;
pub mod ddr;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod krr;
pub mod loss;
pub mod synth;

pub use data::{
    make_grid, standardize_outcome, ArmModel, Dataset, DdrModel, DeltaMatrix, DensityEstimate,
    EvaluationGrid, Hyperparameters,
};
pub use ddr::{
    ddr_fit, ddr_predict, fit_arm_with_params, normalize_density, predict_with_arm,
    select_eta, select_hyperparameters, sharpen_density, unstandardize_density, CvSample,
    EtaSample, FitReport, FittedDdr, HyperparameterGrid, Selection,
};
pub use error::{DdrError, Result};
pub use inference::{
    conditional_cdf, kde_ucv, permutation_test, slope_equality_test, sup_cdf_statistic,
    welch_t_test, KdeFit, PermutationTestResult, SlopeTestResult, UcvSample, WelchResult,
};
pub use kernels::{build_delta_matrix, gaussian_delta, median_heuristic, rbf_gram, RbfKernel};
pub use krr::{krr_fit, krr_loo, krr_predict, KrrFit};
pub use loss::{empirical_mise, interp_density, trapezoid_auc, true_mise, LossValue};
pub use synth::{
    benchmark_csv, derive_seed, oracle_density, run_benchmark, sample, BenchmarkConfig,
    BenchmarkResult, ModelKind, SyntheticModel,
};
