//! Shared data types: datasets, evaluation grids, density estimates, and the
//! fitted model that ties them together.
//!
//! Outcomes are always standardized before any kernel work so that the pulse
//! width `h` and the sharpening threshold `eta` live on a scale-free axis.
//! [`standardize_outcome`] and [`make_grid`] are the two entry points that set
//! up that axis; everything downstream assumes it.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DdrError, Result};

/// Relative tolerance for the equispacing check on grid points.
const GRID_SPACING_RTOL: f64 = 1e-12;

/// A supervised sample: covariate rows, a continuous outcome, and optionally a
/// treatment label per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: Array2<f64>,
    outcome: Array1<f64>,
    treatment: Option<Vec<String>>,
}

impl Dataset {
    /// Validates and wraps the raw columns.
    ///
    /// Requires at least 2 rows, finite entries everywhere, matching lengths,
    /// and (when a treatment vector is given) non-empty labels with at least
    /// 2 rows per label.
    pub fn new(
        covariates: Array2<f64>,
        outcome: Array1<f64>,
        treatment: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if n < 2 {
            return Err(invalid(format!("dataset needs at least 2 rows, got {n}")));
        }
        if outcome.len() != n {
            return Err(invalid(format!(
                "outcome length {} does not match {} covariate rows",
                outcome.len(),
                n
            )));
        }
        if covariates.ncols() == 0 {
            return Err(invalid("dataset needs at least one covariate column"));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(invalid("covariates contain a non-finite value"));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(invalid("outcome contains a non-finite value"));
        }
        if let Some(labels) = &treatment {
            if labels.len() != n {
                return Err(invalid(format!(
                    "treatment length {} does not match {} rows",
                    labels.len(),
                    n
                )));
            }
            if labels.iter().any(|l| l.is_empty()) {
                return Err(invalid("empty treatment label"));
            }
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for l in labels {
                *counts.entry(l.as_str()).or_default() += 1;
            }
            for (label, count) in counts {
                if count < 2 {
                    return Err(DdrError::ArmTooSmall {
                        label: label.to_string(),
                        size: count,
                        min: 2,
                    });
                }
            }
        }
        Ok(Dataset {
            covariates,
            outcome,
            treatment,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn outcome(&self) -> &Array1<f64> {
        &self.outcome
    }

    pub fn treatment(&self) -> Option<&[String]> {
        self.treatment.as_deref()
    }

    /// Distinct treatment labels in ascending order. A dataset without a
    /// treatment column reports the single implicit arm label `""`.
    pub fn arm_labels(&self) -> Vec<String> {
        match &self.treatment {
            None => vec![String::new()],
            Some(labels) => {
                let mut distinct: Vec<String> = labels.clone();
                distinct.sort();
                distinct.dedup();
                distinct
            }
        }
    }

    /// Row indices belonging to an arm. With no treatment column, the implicit
    /// arm `""` owns every row.
    pub fn arm_rows(&self, label: &str) -> Result<Vec<usize>> {
        match &self.treatment {
            None if label.is_empty() => Ok((0..self.n()).collect()),
            None => Err(self.unknown_arm(label)),
            Some(labels) => {
                let rows: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.as_str() == label)
                    .map(|(i, _)| i)
                    .collect();
                if rows.is_empty() {
                    Err(self.unknown_arm(label))
                } else {
                    Ok(rows)
                }
            }
        }
    }

    /// Covariates and outcome restricted to one arm.
    pub fn arm_data(&self, label: &str) -> Result<(Array2<f64>, Array1<f64>)> {
        let rows = self.arm_rows(label)?;
        Ok((self.select_rows(&rows), rows.iter().map(|&i| self.outcome[i]).collect()))
    }

    pub(crate) fn select_rows(&self, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.p()));
        for (k, &i) in rows.iter().enumerate() {
            out.row_mut(k).assign(&self.covariates.row(i));
        }
        out
    }

    fn unknown_arm(&self, label: &str) -> DdrError {
        DdrError::UnknownArm {
            label: label.to_string(),
            available: self.arm_labels().join(", "),
        }
    }
}

/// An equispaced axis of evaluation points for densities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationGrid {
    points: Array1<f64>,
    spacing: f64,
}

impl EvaluationGrid {
    /// Validates an explicit point set: at least 3 points, positive spacing,
    /// and every gap within `1e-12 * spacing` of the declared spacing.
    pub fn new(points: Array1<f64>, spacing: f64) -> Result<Self> {
        if points.len() < 3 {
            return Err(invalid(format!(
                "grid needs at least 3 points, got {}",
                points.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(invalid(format!("grid spacing must be positive, got {spacing}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid contains a non-finite point"));
        }
        for w in points.as_slice().expect("contiguous").windows(2) {
            if ((w[1] - w[0]) - spacing).abs() >= GRID_SPACING_RTOL * spacing {
                return Err(invalid(format!(
                    "grid is not equispaced: gap {} vs spacing {}",
                    w[1] - w[0],
                    spacing
                )));
            }
        }
        Ok(EvaluationGrid { points, spacing })
    }

    /// Builds the grid `start + j * spacing` without re-running the
    /// equispacing check. Used for affine images of validated grids, where
    /// rounding of a large offset can exceed the strict relative tolerance
    /// even though the construction is equispaced by definition.
    pub(crate) fn from_affine(start: f64, end: f64, d: usize) -> Self {
        let spacing = (end - start) / (d - 1) as f64;
        let mut points = Array1::zeros(d);
        for j in 0..d {
            points[j] = start + j as f64 * spacing;
        }
        points[0] = start;
        points[d - 1] = end;
        EvaluationGrid { points, spacing }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &Array1<f64> {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

/// Equispaced grid spanning the observed outcome range.
///
/// The endpoints are exactly `min(outcome)` and `max(outcome)`.
///
/// ```
/// # use ndarray::array;
/// let grid = ddr_core::make_grid(&array![-1.0, 0.0, 3.0], 5).unwrap();
/// assert_eq!(grid.points().to_vec(), vec![-1.0, 0.0, 1.0, 2.0, 3.0]);
/// assert_eq!(grid.spacing(), 1.0);
/// ```
pub fn make_grid(outcome: &Array1<f64>, d: usize) -> Result<EvaluationGrid> {
    if d < 3 {
        return Err(invalid(format!("grid size must be at least 3, got {d}")));
    }
    if outcome.is_empty() {
        return Err(invalid("cannot build a grid from an empty outcome"));
    }
    if outcome.iter().any(|v| !v.is_finite()) {
        return Err(invalid("outcome contains a non-finite value"));
    }
    let min = outcome.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = outcome.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(DdrError::ZeroOutcomeRange(min));
    }
    Ok(EvaluationGrid::from_affine(min, max, d))
}

/// Centers and scales an outcome to mean 0 and sample standard deviation 1
/// (n-1 denominator). Returns the standardized values with the location and
/// scale needed to undo the map.
pub fn standardize_outcome(outcome: &Array1<f64>) -> Result<(Array1<f64>, f64, f64)> {
    let n = outcome.len();
    if n < 2 {
        return Err(invalid(format!("standardization needs at least 2 values, got {n}")));
    }
    let mean = outcome.sum() / n as f64;
    let ss: f64 = outcome.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    if !(sd.is_finite() && sd > 0.0) {
        return Err(DdrError::DegenerateOutcome(sd));
    }
    Ok((outcome.mapv(|v| (v - mean) / sd), mean, sd))
}

/// Tuned settings for one arm's fit: the Gaussian pulse width `h` applied to
/// the standardized outcome, the ridge penalty (multiplied by n inside the
/// solver), the covariate kernel bandwidth as a multiple of the median
/// pairwise distance, and the sharpening threshold `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub h: f64,
    pub ridge: f64,
    pub sigma_multiplier: f64,
    pub eta: f64,
}

/// Gaussian pulse evaluations: entry `(i, k)` is the pulse of width `h`
/// centered at outcome `y_i`, evaluated at grid point `z_k`. These are the
/// regression targets.
#[derive(Debug, Clone)]
pub struct DeltaMatrix {
    pub values: Array2<f64>,
    pub h: f64,
}

/// A density sampled on an evaluation grid.
///
/// `normalized` records whether the values have been clipped at zero and
/// rescaled to unit area (trapezoid rule on the grid).
#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub grid: EvaluationGrid,
    pub values: Array1<f64>,
    pub normalized: bool,
}

/// One arm of a fitted model: everything needed to reproduce predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmModel {
    /// Training covariate rows for this arm.
    pub x_train: Array2<f64>,
    /// Dual coefficients, one column per grid point.
    pub dual: Array2<f64>,
    /// Selected hyperparameters.
    pub params: Hyperparameters,
    /// Absolute covariate kernel bandwidth (sigma_multiplier times the arm's
    /// median pairwise distance).
    pub bandwidth: f64,
    /// Outcome standardization location (training mean).
    pub location: f64,
    /// Outcome standardization scale (training sample sd).
    pub scale: f64,
    /// Evaluation grid on the standardized outcome scale.
    pub grid: EvaluationGrid,
}

/// A fitted conditional density model, one entry per treatment arm.
///
/// Datasets without a treatment column fit a single arm stored under
/// [`DdrModel::SINGLE_ARM`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdrModel {
    pub arms: BTreeMap<String, ArmModel>,
}

impl DdrModel {
    /// Reserved label for the implicit arm of an untreated dataset.
    pub const SINGLE_ARM: &'static str = "";

    pub fn arm(&self, label: &str) -> Result<&ArmModel> {
        self.arms.get(label).ok_or_else(|| DdrError::UnknownArm {
            label: label.to_string(),
            available: self.arm_labels().join(", "),
        })
    }

    pub fn arm_labels(&self) -> Vec<String> {
        self.arms.keys().cloned().collect()
    }

    /// The unique arm, if there is exactly one.
    pub fn single_arm(&self) -> Option<(&str, &ArmModel)> {
        if self.arms.len() == 1 {
            self.arms.iter().next().map(|(k, v)| (k.as_str(), v))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_spans_outcome_range() {
        let grid = make_grid(&array![-1.0, 0.0, 3.0], 5).unwrap();
        assert_eq!(grid.points().to_vec(), vec![-1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(grid.spacing(), 1.0);
        assert_eq!(grid.start(), -1.0);
        assert_eq!(grid.end(), 3.0);
    }

    #[test]
    fn grid_rejects_constant_outcome() {
        let err = make_grid(&array![2.0, 2.0, 2.0], 10).unwrap_err();
        assert!(matches!(err, DdrError::ZeroOutcomeRange(_)));
        assert_eq!(err.code(), "zero_outcome_range");
    }

    #[test]
    fn grid_rejects_tiny_d() {
        assert!(make_grid(&array![0.0, 1.0], 2).is_err());
    }

    #[test]
    fn standardize_two_points() {
        let (z, m, s) = standardize_outcome(&array![0.0, 2.0]).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(s, std::f64::consts::SQRT_2);
        assert!((z[0] + 0.7071067811865475).abs() < 1e-15);
        assert!((z[1] - 0.7071067811865475).abs() < 1e-15);
    }

    #[test]
    fn standardize_rejects_constant() {
        let err = standardize_outcome(&array![5.0, 5.0, 5.0]).unwrap_err();
        assert!(matches!(err, DdrError::DegenerateOutcome(_)));
    }

    #[test]
    fn standardize_round_trip() {
        let y = array![3.1, -0.4, 2.2, 7.9, 0.05];
        let (z, m, s) = standardize_outcome(&y).unwrap();
        for (zi, yi) in z.iter().zip(y.iter()) {
            assert!((zi * s + m - yi).abs() <= 1e-12 * yi.abs().max(1.0));
        }
        let mean = z.sum() / z.len() as f64;
        let var: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (z.len() - 1) as f64;
        assert!(mean.abs() < 1e-14);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_validates_arm_sizes() {
        let x = array![[0.0], [1.0], [2.0]];
        let y = array![0.0, 1.0, 2.0];
        let t = vec!["a".to_string(), "a".to_string(), "b".to_string()];
        let err = Dataset::new(x, y, Some(t)).unwrap_err();
        assert!(matches!(err, DdrError::ArmTooSmall { .. }));
    }

    #[test]
    fn dataset_rejects_empty_label() {
        let x = array![[0.0], [1.0]];
        let y = array![0.0, 1.0];
        let t = vec!["".to_string(), "b".to_string()];
        assert!(Dataset::new(x, y, Some(t)).is_err());
    }

    #[test]
    fn dataset_arm_selection() {
        let x = array![[0.0, 1.0], [1.0, 2.0], [2.0, 3.0], [3.0, 4.0]];
        let y = array![10.0, 11.0, 12.0, 13.0];
        let t = vec!["b".into(), "a".into(), "b".into(), "a".into()];
        let ds = Dataset::new(x, y, Some(t)).unwrap();
        assert_eq!(ds.arm_labels(), vec!["a".to_string(), "b".to_string()]);
        let (xa, ya) = ds.arm_data("a").unwrap();
        assert_eq!(xa, array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(ya, array![11.0, 13.0]);
        assert!(ds.arm_data("c").is_err());
    }

    #[test]
    fn untreated_dataset_has_implicit_arm() {
        let x = array![[0.0], [1.0]];
        let y = array![0.0, 1.0];
        let ds = Dataset::new(x, y, None).unwrap();
        assert_eq!(ds.arm_labels(), vec![String::new()]);
        let (xa, _) = ds.arm_data(DdrModel::SINGLE_ARM).unwrap();
        assert_eq!(xa.nrows(), 2);
    }

    #[test]
    fn grid_equispacing_is_enforced() {
        let bad = Array1::from(vec![0.0, 1.0, 2.5]);
        assert!(EvaluationGrid::new(bad, 1.0).is_err());
        let good = Array1::from(vec![0.0, 1.0, 2.0]);
        assert!(EvaluationGrid::new(good, 1.0).is_ok());
    }

    #[test]
    fn grid_spacing_times_gaps_recovers_range() {
        for d in [3usize, 7, 100, 501] {
            let y = array![-2.5, 4.25];
            let grid = make_grid(&y, d).unwrap();
            let span = grid.spacing() * (d - 1) as f64;
            assert!((span - 6.75).abs() < 1e-12 * 6.75);
        }
    }
}
