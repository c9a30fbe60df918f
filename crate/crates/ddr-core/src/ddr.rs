//! The estimation pipeline: tune, regress, normalize, sharpen.
//!
//! A fit works per treatment arm on the standardized outcome scale:
//!
//! 1. grid search (pulse width h, ridge, kernel bandwidth multiplier) scored
//!    by the empirical criterion on raw leave-one-out estimates,
//! 2. a final regression at the winning combination,
//! 3. a sharpening threshold eta tuned on normalized leave-one-out rows.
//!
//! Prediction replays the same post-processing: regress, clip and rescale to
//! unit area, subtract eta and rescale again, then map the grid back to the
//! original outcome units.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    make_grid, standardize_outcome, ArmModel, Dataset, DdrModel, DensityEstimate, EvaluationGrid,
    Hyperparameters,
};
use crate::error::{invalid, DdrError, Result};
use crate::kernels::{build_delta_matrix, median_heuristic, rbf_gram};
use crate::krr::{krr_fit, RidgeSystem};
use crate::loss::{empirical_mise, trapezoid_auc};

/// Densities with less trapezoid mass than this after clipping fall back to
/// the uniform density on the grid span.
const DEGENERATE_AUC: f64 = 1e-12;

/// Warning emitted when a clipped estimate had no mass left.
pub const DEGENERATE_DENSITY_WARNING: &str = "degenerate density, uniform fallback";

/// Candidate values for the tuning search.
///
/// The defaults are 50 pulse widths from 0.01 to 0.50, ridge penalties from
/// 1e-1 down to 1e-6 by decades, bandwidth multipliers
/// {0.5, 0.8, 1.1, 1.7, 2.0} applied to the median pairwise distance, and 26
/// sharpening candidates.
#[derive(Debug, Clone, Serialize)]
pub struct HyperparameterGrid {
    pub h_values: Vec<f64>,
    pub ridge_values: Vec<f64>,
    pub sigma_multipliers: Vec<f64>,
    pub eta_candidate_count: usize,
}

impl Default for HyperparameterGrid {
    fn default() -> Self {
        HyperparameterGrid {
            h_values: (1..=50).map(|i| i as f64 / 100.0).collect(),
            ridge_values: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            sigma_multipliers: vec![0.5, 0.8, 1.1, 1.7, 2.0],
            eta_candidate_count: 26,
        }
    }
}

impl HyperparameterGrid {
    fn validate(&self) -> Result<()> {
        if self.h_values.is_empty()
            || self.ridge_values.is_empty()
            || self.sigma_multipliers.is_empty()
        {
            return Err(invalid("hyperparameter grid has an empty candidate list"));
        }
        if self.eta_candidate_count == 0 {
            return Err(invalid("eta candidate count must be at least 1"));
        }
        let positive = |vs: &[f64]| vs.iter().all(|&v| v.is_finite() && v > 0.0);
        if !positive(&self.h_values) {
            return Err(invalid("pulse width candidates must be positive"));
        }
        if !positive(&self.ridge_values) {
            return Err(invalid("ridge candidates must be positive"));
        }
        if !positive(&self.sigma_multipliers) {
            return Err(invalid("bandwidth multiplier candidates must be positive"));
        }
        Ok(())
    }
}

/// One scored combination from the tuning search.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CvSample {
    pub h: f64,
    pub ridge: f64,
    pub sigma_multiplier: f64,
    pub loss: f64,
}

/// One scored sharpening candidate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EtaSample {
    pub eta: f64,
    pub loss: f64,
}

/// Diagnostics from one arm's fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// Winning combination, including the sharpening threshold.
    pub selected: Hyperparameters,
    /// Every successfully scored (h, ridge, multiplier) combination, in
    /// preference order (larger h, then larger ridge, then larger multiplier).
    pub cv_surface: Vec<CvSample>,
    /// Every scored sharpening candidate in ascending eta order.
    pub eta_curve: Vec<EtaSample>,
    /// Accumulated notes: skipped combinations, degenerate densities.
    pub warnings: Vec<String>,
}

impl FitReport {
    /// Tuning-search loss of the selected combination.
    pub fn cv_loss(&self) -> f64 {
        self.cv_surface
            .iter()
            .map(|s| s.loss)
            .fold(f64::INFINITY, f64::min)
    }

    /// Sharpening loss at the selected eta.
    pub fn eta_loss(&self) -> f64 {
        self.eta_curve
            .iter()
            .map(|s| s.loss)
            .fold(f64::INFINITY, f64::min)
    }

    /// Sharpening loss at eta = 0 (always a candidate).
    pub fn eta_zero_loss(&self) -> f64 {
        self.eta_curve
            .iter()
            .find(|s| s.eta == 0.0)
            .map(|s| s.loss)
            .unwrap_or(f64::INFINITY)
    }
}

/// Outcome of the first tuning stage.
#[derive(Debug, Clone)]
pub struct Selection {
    pub h: f64,
    pub ridge: f64,
    pub sigma_multiplier: f64,
    pub cv_surface: Vec<CvSample>,
    pub warnings: Vec<String>,
}

/// Index of the minimum loss under the documented preference order. `combos`
/// must already be in preference order; ties keep the earliest entry.
pub(crate) fn pick_best(losses: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, loss) in losses.iter().enumerate() {
        if let Some(l) = loss {
            match best {
                Some((_, bl)) if *l >= bl => {}
                _ => best = Some((i, *l)),
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Grid search over (h, ridge, sigma multiplier), scoring each combination by
/// the empirical criterion on raw leave-one-out estimates.
///
/// Individual combinations may fail (for example leverage saturation at an
/// extreme ridge); those are skipped with a warning. Only a search in which
/// every combination fails is an error. Ties prefer the larger h, then the
/// larger ridge, then the larger multiplier.
pub fn select_hyperparameters(
    x: &Array2<f64>,
    outcome_std: &Array1<f64>,
    grid: &EvaluationGrid,
    hpgrid: &HyperparameterGrid,
) -> Result<Selection> {
    hpgrid.validate()?;
    let median = median_heuristic(x)?;

    let mut h_sorted = hpgrid.h_values.clone();
    h_sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite h"));
    let mut ridge_sorted = hpgrid.ridge_values.clone();
    ridge_sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite ridge"));
    let mut sigma_sorted = hpgrid.sigma_multipliers.clone();
    sigma_sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite multiplier"));

    let deltas: Vec<Array2<f64>> = h_sorted
        .iter()
        .map(|&h| build_delta_matrix(outcome_std, grid, h).map(|dm| dm.values))
        .collect::<Result<_>>()?;

    // One factorization per (ridge, multiplier) pair, reused across every h.
    // Pairs are independent, so parallel evaluation cannot change any value.
    let pairs: Vec<(f64, f64)> = ridge_sorted
        .iter()
        .flat_map(|&r| sigma_sorted.iter().map(move |&s| (r, s)))
        .collect();
    let per_pair: Vec<Vec<std::result::Result<f64, String>>> = pairs
        .par_iter()
        .map(|&(ridge, sigma)| {
            let sys = match RidgeSystem::new(x, ridge, sigma * median) {
                Ok(sys) => sys,
                Err(e) => return vec![Err(e.to_string()); deltas.len()],
            };
            if let Err(e) = sys.check_leverages() {
                return vec![Err(e.to_string()); deltas.len()];
            }
            deltas
                .iter()
                .map(|targets| {
                    sys.loo(targets)
                        .and_then(|loo| empirical_mise(&loo, outcome_std, grid))
                        .map(|l| l.value())
                        .map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    // Flatten into (h, ridge, sigma) preference order.
    let mut combos = Vec::with_capacity(h_sorted.len() * pairs.len());
    let mut losses = Vec::with_capacity(combos.capacity());
    let mut first_failure: Option<String> = None;
    let mut failures = 0usize;
    for (hi, &h) in h_sorted.iter().enumerate() {
        for (ri, &ridge) in ridge_sorted.iter().enumerate() {
            for (si, &sigma) in sigma_sorted.iter().enumerate() {
                let pair_idx = ri * sigma_sorted.len() + si;
                combos.push((h, ridge, sigma));
                match &per_pair[pair_idx][hi] {
                    Ok(loss) => losses.push(Some(*loss)),
                    Err(msg) => {
                        failures += 1;
                        if first_failure.is_none() {
                            first_failure = Some(msg.clone());
                        }
                        losses.push(None);
                    }
                }
            }
        }
    }

    let best = pick_best(&losses).ok_or_else(|| DdrError::NoViableHyperparameters {
        tried: combos.len(),
        first_failure: first_failure.clone().unwrap_or_default(),
    })?;

    let cv_surface: Vec<CvSample> = combos
        .iter()
        .zip(&losses)
        .filter_map(|(&(h, ridge, sigma), loss)| {
            loss.map(|loss| CvSample {
                h,
                ridge,
                sigma_multiplier: sigma,
                loss,
            })
        })
        .collect();
    let mut warnings = Vec::new();
    if failures > 0 {
        warnings.push(format!(
            "{failures} of {} combinations failed during tuning (first: {})",
            combos.len(),
            first_failure.unwrap_or_default()
        ));
    }

    let (h, ridge, sigma_multiplier) = combos[best];
    Ok(Selection {
        h,
        ridge,
        sigma_multiplier,
        cv_surface,
        warnings,
    })
}

/// Clips negatives to zero and rescales to unit trapezoid area.
///
/// Returns the estimate and a flag that is true when the clipped values had
/// (numerically) no mass, in which case the uniform density on the grid span
/// is returned instead and callers should surface
/// [`DEGENERATE_DENSITY_WARNING`].
pub fn normalize_density(
    values: &ArrayView1<f64>,
    grid: &EvaluationGrid,
) -> Result<(DensityEstimate, bool)> {
    if values.len() != grid.len() {
        return Err(invalid(format!(
            "density length {} does not match grid size {}",
            values.len(),
            grid.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("density values contain a non-finite value"));
    }
    let clipped = values.mapv(|v| v.max(0.0));
    let auc = trapezoid_auc(&clipped.view(), grid);
    if auc < DEGENERATE_AUC {
        let uniform = 1.0 / (grid.end() - grid.start());
        return Ok((
            DensityEstimate {
                grid: grid.clone(),
                values: Array1::from_elem(grid.len(), uniform),
                normalized: true,
            },
            true,
        ));
    }
    let estimate = DensityEstimate {
        grid: grid.clone(),
        values: clipped.mapv(|v| v / auc),
        normalized: true,
    };
    debug_assert!((estimate.auc() - 1.0).abs() < 1e-6);
    Ok((estimate, false))
}

/// Subtracts `eta` from a normalized density, clips at zero, and renormalizes.
/// Pushes small spurious bumps to exactly zero while keeping unit area.
///
/// Same return convention as [`normalize_density`]: the flag is true when
/// sharpening wiped out all mass and the uniform fallback was used.
pub fn sharpen_density(
    values: &ArrayView1<f64>,
    grid: &EvaluationGrid,
    eta: f64,
) -> Result<(DensityEstimate, bool)> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(invalid(format!("eta must be nonnegative, got {eta}")));
    }
    let shifted = values.mapv(|v| v - eta);
    normalize_density(&shifted.view(), grid)
}

/// Tunes the sharpening threshold at a fixed tuning-stage combination.
///
/// Candidates are `eta_candidate_count` equispaced values from 0 to half the
/// largest raw leave-one-out estimate (inclusive; a count of 1 degenerates to
/// {0}). Each candidate is scored by the empirical criterion after applying
/// normalize-then-sharpen to every leave-one-out row. Ties prefer the smaller
/// eta, so eta = 0 wins unless sharpening strictly helps.
pub fn select_eta(
    x: &Array2<f64>,
    outcome_std: &Array1<f64>,
    grid: &EvaluationGrid,
    h: f64,
    ridge: f64,
    sigma_multiplier: f64,
    hpgrid: &HyperparameterGrid,
) -> Result<(f64, Vec<EtaSample>, Vec<String>)> {
    if hpgrid.eta_candidate_count == 0 {
        return Err(invalid("eta candidate count must be at least 1"));
    }
    let median = median_heuristic(x)?;
    let targets = build_delta_matrix(outcome_std, grid, h)?.values;
    let sys = RidgeSystem::new(x, ridge, sigma_multiplier * median)?;
    let loo = sys.loo(&targets)?;

    let max_entry = loo.iter().cloned().fold(0.0f64, f64::max);
    let upper = 0.5 * max_entry;
    let count = hpgrid.eta_candidate_count;
    let candidates: Vec<f64> = if count == 1 || upper == 0.0 {
        vec![0.0; 1]
    } else {
        (0..count)
            .map(|i| upper * i as f64 / (count - 1) as f64)
            .collect()
    };

    let n = loo.nrows();
    let d = grid.len();
    let mut curve = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    let mut fallbacks_at_best = 0usize;
    for &eta in &candidates {
        let mut processed = Array2::zeros((n, d));
        let mut fallbacks = 0usize;
        for (i, row) in loo.rows().into_iter().enumerate() {
            let (normalized, fb1) = normalize_density(&row, grid)?;
            let (sharpened, fb2) = sharpen_density(&normalized.values.view(), grid, eta)?;
            if fb1 || fb2 {
                fallbacks += 1;
            }
            processed.row_mut(i).assign(&sharpened.values);
        }
        let loss = empirical_mise(&processed, outcome_std, grid)?.value();
        curve.push(EtaSample { eta, loss });
        // Ascending candidates with a strict comparison keep the smallest eta
        // among ties.
        if best.map(|(_, bl)| loss < bl).unwrap_or(true) {
            best = Some((eta, loss));
            fallbacks_at_best = fallbacks;
        }
    }

    let (eta, _) = best.expect("at least one candidate");
    let mut warnings = Vec::new();
    if fallbacks_at_best > 0 {
        warnings.push(format!(
            "{DEGENERATE_DENSITY_WARNING}: {fallbacks_at_best} leave-one-out rows at the selected eta"
        ));
    }
    Ok((eta, curve, warnings))
}

/// Fits one arm at fixed hyperparameters: standardizes the outcome, builds the
/// grid and pulse targets, and solves the ridge system. This is the refit
/// primitive shared by [`ddr_fit`] and the permutation test.
pub fn fit_arm_with_params(
    x: &Array2<f64>,
    outcome: &Array1<f64>,
    d: usize,
    params: Hyperparameters,
) -> Result<ArmModel> {
    let (y_std, location, scale) = standardize_outcome(outcome)?;
    let grid = make_grid(&y_std, d)?;
    let median = median_heuristic(x)?;
    let bandwidth = params.sigma_multiplier * median;
    let targets = build_delta_matrix(&y_std, &grid, params.h)?.values;
    let fit = krr_fit(x, &targets, params.ridge, bandwidth)?;
    Ok(ArmModel {
        x_train: x.clone(),
        dual: fit.dual,
        params,
        bandwidth,
        location,
        scale,
        grid,
    })
}

/// A fitted model together with per-arm tuning diagnostics.
#[derive(Debug, Clone)]
pub struct FittedDdr {
    pub model: DdrModel,
    pub reports: BTreeMap<String, FitReport>,
}

/// Fits the full pipeline on every treatment arm.
///
/// Each arm (at least 3 samples) gets its own standardization, evaluation grid
/// of `d` points, tuning search, final regression, and sharpening threshold.
/// Deterministic: same dataset and grids, same model.
pub fn ddr_fit(dataset: &Dataset, d: usize, hpgrid: &HyperparameterGrid) -> Result<FittedDdr> {
    let mut arms = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for label in dataset.arm_labels() {
        let (x, y) = dataset.arm_data(&label)?;
        if x.nrows() < 3 {
            return Err(DdrError::ArmTooSmall {
                label,
                size: x.nrows(),
                min: 3,
            });
        }
        let (y_std, _, _) = standardize_outcome(&y)?;
        let grid = make_grid(&y_std, d)?;
        let selection = select_hyperparameters(&x, &y_std, &grid, hpgrid)?;
        let (eta, eta_curve, eta_warnings) = select_eta(
            &x,
            &y_std,
            &grid,
            selection.h,
            selection.ridge,
            selection.sigma_multiplier,
            hpgrid,
        )?;
        let params = Hyperparameters {
            h: selection.h,
            ridge: selection.ridge,
            sigma_multiplier: selection.sigma_multiplier,
            eta,
        };
        let arm = fit_arm_with_params(&x, &y, d, params)?;
        let mut warnings = selection.warnings;
        warnings.extend(eta_warnings);
        reports.insert(
            label.clone(),
            FitReport {
                selected: params,
                cv_surface: selection.cv_surface,
                eta_curve,
                warnings,
            },
        );
        arms.insert(label, arm);
    }
    Ok(FittedDdr {
        model: DdrModel { arms },
        reports,
    })
}

/// Maps a density on the standardized scale back to outcome units:
/// `z -> location + scale * z`, values divided by `scale`. Area is preserved.
pub fn unstandardize_density(
    estimate: &DensityEstimate,
    location: f64,
    scale: f64,
) -> Result<DensityEstimate> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(invalid(format!("scale must be positive, got {scale}")));
    }
    let grid = EvaluationGrid::from_affine(
        location + scale * estimate.grid.start(),
        location + scale * estimate.grid.end(),
        estimate.grid.len(),
    );
    Ok(DensityEstimate {
        grid,
        values: estimate.values.mapv(|v| v / scale),
        normalized: estimate.normalized,
    })
}

/// Predicts conditional densities for each query row using one fitted arm.
/// Every returned estimate is normalized, sharpened with the arm's eta, and
/// expressed in original outcome units on the arm's (un-standardized) grid.
pub fn predict_with_arm(arm: &ArmModel, xq: &Array2<f64>) -> Result<Vec<DensityEstimate>> {
    if xq.ncols() != arm.x_train.ncols() {
        return Err(invalid(format!(
            "query dimension {} does not match training dimension {}",
            xq.ncols(),
            arm.x_train.ncols()
        )));
    }
    if xq.iter().any(|v| !v.is_finite()) {
        return Err(invalid("query covariates contain a non-finite value"));
    }
    let raw = rbf_gram(xq, &arm.x_train, arm.bandwidth)?.dot(&arm.dual);
    let mut out = Vec::with_capacity(xq.nrows());
    for row in raw.rows() {
        let (normalized, _) = normalize_density(&row, &arm.grid)?;
        let (sharpened, _) = sharpen_density(&normalized.values.view(), &arm.grid, arm.params.eta)?;
        out.push(unstandardize_density(&sharpened, arm.location, arm.scale)?);
    }
    Ok(out)
}

/// Predicts conditional densities from a fitted model for one arm label.
pub fn ddr_predict(model: &DdrModel, arm: &str, xq: &Array2<f64>) -> Result<Vec<DensityEstimate>> {
    predict_with_arm(model.arm(arm)?, xq)
}
