//! File plumbing: CSV ingestion, model persistence, and density export.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use ddr_core::{Dataset, DdrError, DdrModel, DensityEstimate};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Schema tag written into every model file.
pub const MODEL_SCHEMA: &str = "ddr_model_v1";

/// A command failure: a stable machine-readable code plus a one-line message.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Collapse any embedded newlines so the error surface stays one line.
        let message: String = self
            .message
            .chars()
            .map(|c| if c == '\n' { ' ' } else { c })
            .collect();
        write!(f, "error: {}: {}", self.code, message)
    }
}

impl From<DdrError> for CliError {
    fn from(e: DdrError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// A parsed CSV file: header plus raw string cells, row order preserved.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                CliError::new(
                    "missing_column",
                    format!(
                        "column '{name}' not found (header has: {})",
                        self.headers.join(", ")
                    ),
                )
            })
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::new("io", format!("cannot read '{}': {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::new("csv", format!("bad header in '{}': {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    if headers.is_empty() {
        return Err(CliError::new(
            "csv",
            format!("'{}' has an empty header", path.display()),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::new("csv", format!("'{}': {e}", path.display())))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok(Table { headers, rows })
}

/// Parses one cell as a finite number. `row` is 0-based over data rows; the
/// reported location counts the header as row 1.
pub(crate) fn parse_cell(cell: &str, row: usize, column: &str) -> CliResult<f64> {
    let parsed: Option<f64> = cell.parse().ok().filter(|v: &f64| v.is_finite());
    parsed.ok_or_else(|| {
        CliError::new(
            "bad_cell",
            format!(
                "row {}, column '{column}': '{cell}' is not a finite number",
                row + 2
            ),
        )
    })
}

/// Column selection for [`dataset_from_table`].
pub struct Selectors<'a> {
    pub outcome: &'a str,
    pub treatment: Option<&'a str>,
    /// Explicit covariate column names, or None for "all remaining columns".
    pub covariates: Option<&'a [String]>,
}

/// Maps a raw table onto a dataset, returning the covariate names actually
/// used (in column order).
pub fn dataset_from_table(
    table: &Table,
    selectors: &Selectors<'_>,
) -> CliResult<(Dataset, Vec<String>)> {
    let outcome_idx = table.column_index(selectors.outcome)?;
    let treatment_idx = selectors
        .treatment
        .map(|t| table.column_index(t))
        .transpose()?;
    let covariate_names: Vec<String> = match selectors.covariates {
        Some(names) => {
            for name in names {
                table.column_index(name)?;
            }
            names.to_vec()
        }
        None => {
            let taken: BTreeSet<usize> =
                [Some(outcome_idx), treatment_idx].into_iter().flatten().collect();
            table
                .headers
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken.contains(i))
                .map(|(_, h)| h.clone())
                .collect()
        }
    };
    if covariate_names.is_empty() {
        return Err(CliError::new(
            "missing_column",
            "no covariate columns remain after selecting outcome and treatment",
        ));
    }
    if table.rows.len() < 2 {
        return Err(CliError::new(
            "too_few_rows",
            format!("need at least 2 data rows, got {}", table.rows.len()),
        ));
    }
    let covariate_idx: Vec<usize> = covariate_names
        .iter()
        .map(|n| table.column_index(n))
        .collect::<CliResult<_>>()?;

    let n = table.rows.len();
    let p = covariate_idx.len();
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    let mut treatment = treatment_idx.map(|_| Vec::with_capacity(n));
    for (r, row) in table.rows.iter().enumerate() {
        if row.len() != table.headers.len() {
            return Err(CliError::new(
                "csv",
                format!(
                    "row {} has {} cells, header has {}",
                    r + 2,
                    row.len(),
                    table.headers.len()
                ),
            ));
        }
        for (c, &idx) in covariate_idx.iter().enumerate() {
            x[(r, c)] = parse_cell(&row[idx], r, &covariate_names[c])?;
        }
        y[r] = parse_cell(&row[outcome_idx], r, selectors.outcome)?;
        if let (Some(tvec), Some(tidx)) = (treatment.as_mut(), treatment_idx) {
            tvec.push(row[tidx].clone());
        }
    }
    let dataset = Dataset::new(x, y, treatment)?;
    Ok((dataset, covariate_names))
}

/// Reads query rows, selecting exactly the given covariate columns in order.
pub fn queries_from_table(table: &Table, covariate_names: &[String]) -> CliResult<Array2<f64>> {
    if table.rows.is_empty() {
        return Err(CliError::new("too_few_rows", "query file has no data rows"));
    }
    let idx: Vec<usize> = covariate_names
        .iter()
        .map(|n| table.column_index(n))
        .collect::<CliResult<_>>()?;
    let mut xq = Array2::zeros((table.rows.len(), idx.len()));
    for (r, row) in table.rows.iter().enumerate() {
        for (c, &i) in idx.iter().enumerate() {
            if i >= row.len() {
                return Err(CliError::new(
                    "csv",
                    format!("row {} is shorter than the header", r + 2),
                ));
            }
            xq[(r, c)] = parse_cell(&row[i], r, &covariate_names[c])?;
        }
    }
    Ok(xq)
}

/// On-disk model representation.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    covariate_names: Vec<String>,
    model: DdrModel,
}

pub fn save_model(path: &Path, model: &DdrModel, covariate_names: &[String]) -> CliResult<()> {
    let file = ModelFile {
        schema: MODEL_SCHEMA.to_string(),
        covariate_names: covariate_names.to_vec(),
        model: model.clone(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| CliError::new("io", format!("cannot serialize model: {e}")))?;
    fs::write(path, json)
        .map_err(|e| CliError::new("io", format!("cannot write '{}': {e}", path.display())))
}

pub fn load_model(path: &Path) -> CliResult<(DdrModel, Vec<String>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("cannot read '{}': {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| {
        CliError::new(
            "model_parse",
            format!("'{}' is not a valid model file: {e}", path.display()),
        )
    })?;
    if file.schema != MODEL_SCHEMA {
        return Err(CliError::new(
            "model_schema",
            format!(
                "'{}' has schema '{}', expected '{MODEL_SCHEMA}'",
                path.display(),
                file.schema
            ),
        ));
    }
    if file.model.arms.is_empty() {
        return Err(CliError::new("model_integrity", "model file has no arms"));
    }
    for (label, arm) in &file.model.arms {
        let name = if label.is_empty() { "<single>" } else { label };
        if arm.x_train.nrows() != arm.dual.nrows() {
            return Err(CliError::new(
                "model_integrity",
                format!(
                    "arm '{name}': {} training rows but {} coefficient rows",
                    arm.x_train.nrows(),
                    arm.dual.nrows()
                ),
            ));
        }
        if arm.dual.ncols() != arm.grid.len() {
            return Err(CliError::new(
                "model_integrity",
                format!(
                    "arm '{name}': coefficient matrix has {} columns but the grid has {} points",
                    arm.dual.ncols(),
                    arm.grid.len()
                ),
            ));
        }
        if arm.x_train.ncols() != file.covariate_names.len() {
            return Err(CliError::new(
                "model_integrity",
                format!(
                    "arm '{name}': {} training columns but {} covariate names",
                    arm.x_train.ncols(),
                    file.covariate_names.len()
                ),
            ));
        }
        if arm.grid.len() < 3 || !(arm.grid.spacing() > 0.0) {
            return Err(CliError::new(
                "model_integrity",
                format!("arm '{name}': invalid evaluation grid"),
            ));
        }
        if !(arm.scale > 0.0) || !arm.location.is_finite() || !(arm.bandwidth > 0.0) {
            return Err(CliError::new(
                "model_integrity",
                format!("arm '{name}': invalid standardization or bandwidth"),
            ));
        }
        if arm
            .dual
            .iter()
            .chain(arm.x_train.iter())
            .any(|v| !v.is_finite())
        {
            return Err(CliError::new(
                "model_integrity",
                format!("arm '{name}': non-finite values"),
            ));
        }
    }
    Ok((file.model, file.covariate_names))
}

/// Output format for exported densities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    Csv,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes densities with their query points in either format. All estimates
/// must share one grid. Numbers carry 17 significant digits, which restores
/// the exact values on re-parse.
pub fn emit_densities(
    queries: &Array2<f64>,
    estimates: &[DensityEstimate],
    path: &Path,
    format: EmitFormat,
) -> CliResult<()> {
    if estimates.is_empty() || queries.nrows() != estimates.len() {
        return Err(CliError::new(
            "internal",
            "estimate count does not match query count",
        ));
    }
    let grid = &estimates[0].grid;
    let text = match format {
        EmitFormat::Json => {
            let mut out = String::from("{\"grid\":[");
            for (k, z) in grid.points().iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&fmt17(*z));
            }
            out.push_str("],\"queries\":[");
            for (i, est) in estimates.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str("{\"x\":[");
                for (c, v) in queries.row(i).iter().enumerate() {
                    if c > 0 {
                        out.push(',');
                    }
                    out.push_str(&fmt17(*v));
                }
                out.push_str("],\"density\":[");
                for (k, v) in est.values.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    out.push_str(&fmt17(*v));
                }
                out.push_str("]}");
            }
            out.push_str("]}\n");
            out
        }
        EmitFormat::Csv => {
            let mut out = String::from("query_index,z,density\n");
            for (i, est) in estimates.iter().enumerate() {
                for (k, v) in est.values.iter().enumerate() {
                    out.push_str(&format!("{i},{},{}\n", fmt17(grid.points()[k]), fmt17(*v)));
                }
            }
            out
        }
    };
    fs::write(path, text)
        .map_err(|e| CliError::new("io", format!("cannot write '{}': {e}", path.display())))
}
