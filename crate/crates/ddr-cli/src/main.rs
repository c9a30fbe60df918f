//! Command line front end for the conditional density estimator.
//!
//! Subcommands: `fit` trains a model from a CSV file and writes it as JSON,
//! `predict` evaluates a saved model at query points, `bench` runs the
//! synthetic benchmark sweep, `permtest` compares two treatment arms with a
//! permutation test, and `kde` fits a covariate-blind kernel density baseline.
//!
//! Every failure exits nonzero with a single `error: <code>: <message>` line
//! on stderr. Successful commands print a one-line JSON summary on stdout.

mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddr_core::{
    ddr_fit, kde_ucv, make_grid, permutation_test, run_benchmark, BenchmarkConfig,
    HyperparameterGrid, ModelKind,
};
use ndarray::{Array1, Array2};

use crate::io::{CliError, CliResult, EmitFormat, Selectors};

#[derive(Parser)]
#[command(name = "ddr", version, about = "Conditional density estimation from pulse targets")]
struct Cli {
    /// Cap the number of worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a conditional density model from a CSV file.
    Fit(FitArgs),
    /// Evaluate a saved model at query covariate rows.
    Predict(PredictArgs),
    /// Run the synthetic benchmark sweep and write a CSV of scores.
    Bench(BenchArgs),
    /// Permutation test for a distributional difference between two arms.
    Permtest(PermtestArgs),
    /// Fit a covariate-blind kernel density to the outcome column.
    Kde(KdeArgs),
}

/// Tuning-grid overrides shared by the fitting commands. Empty lists keep
/// the built-in grid.
#[derive(Args)]
struct GridArgs {
    /// Comma-separated pulse widths to search.
    #[arg(long, value_delimiter = ',')]
    h_values: Vec<f64>,
    /// Comma-separated ridge penalties to search.
    #[arg(long, value_delimiter = ',')]
    ridge_values: Vec<f64>,
    /// Comma-separated kernel bandwidth multipliers to search.
    #[arg(long, value_delimiter = ',')]
    sigma_multipliers: Vec<f64>,
    /// Number of sharpening threshold candidates.
    #[arg(long)]
    eta_count: Option<usize>,
}

impl GridArgs {
    fn build(&self) -> HyperparameterGrid {
        let mut grid = HyperparameterGrid::default();
        if !self.h_values.is_empty() {
            grid.h_values = self.h_values.clone();
        }
        if !self.ridge_values.is_empty() {
            grid.ridge_values = self.ridge_values.clone();
        }
        if !self.sigma_multipliers.is_empty() {
            grid.sigma_multipliers = self.sigma_multipliers.clone();
        }
        if let Some(count) = self.eta_count {
            grid.eta_candidate_count = count;
        }
        grid
    }
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Outcome column name.
    #[arg(long)]
    outcome: String,
    /// Treatment label column name; omit for a single-arm fit.
    #[arg(long)]
    treatment: Option<String>,
    /// Comma-separated covariate columns (default: all remaining columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Evaluation grid size.
    #[arg(long, default_value_t = 500)]
    d: usize,
    /// Where to write the model JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for EmitFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => EmitFormat::Json,
            Format::Csv => EmitFormat::Csv,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Arm label; may be omitted when the model has a single arm.
    #[arg(long)]
    arm: Option<String>,
    /// Query CSV whose header contains the model's covariate columns.
    #[arg(long)]
    queries: PathBuf,
    /// Where to write the densities.
    #[arg(long)]
    out: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    /// Generative model kinds, comma-separated, or "all".
    #[arg(long, default_value = "all")]
    kinds: String,
    /// Covariate dimensions to sweep.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,15,20")]
    dims: Vec<usize>,
    /// Replications per (kind, dimension) cell.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Training sample size per replication.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Master seed; every replication derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Report zero in the seconds column so the file is byte-stable.
    #[arg(long)]
    no_timing: bool,
    /// Evaluation grid size.
    #[arg(long, default_value_t = 200)]
    d: usize,
    /// Fresh covariate draws per replication for the error integral.
    #[arg(long, default_value_t = 200)]
    test_points: usize,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct PermtestArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Outcome column name.
    #[arg(long)]
    outcome: String,
    /// Treatment label column name.
    #[arg(long)]
    treatment: String,
    /// Query CSV with exactly one covariate row.
    #[arg(long)]
    query: PathBuf,
    /// Comma-separated covariate columns (default: all remaining columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Number of permutations.
    #[arg(long, default_value_t = 2000)]
    b: usize,
    /// Master seed; every permutation derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation grid size.
    #[arg(long, default_value_t = 500)]
    d: usize,
    /// Baseline arm label (default: first label in sorted order).
    #[arg(long)]
    arm0: Option<String>,
    /// Comparison arm label (default: second label in sorted order).
    #[arg(long)]
    arm1: Option<String>,
    /// Include the permuted statistics in the JSON output.
    #[arg(long)]
    emit_permutations: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct KdeArgs {
    /// CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Outcome column name.
    #[arg(long)]
    outcome: String,
    /// Where to write the density.
    #[arg(long)]
    out: PathBuf,
    /// Evaluation grid size.
    #[arg(long, default_value_t = 500)]
    d: usize,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments");
            let line = line.strip_prefix("error: ").unwrap_or(line);
            eprintln!("error: usage: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::new("bad_flag", "--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::new("internal", format!("cannot configure threads: {e}")))?;
    }
    match cli.command {
        Command::Fit(args) => run_fit(&args),
        Command::Predict(args) => run_predict(&args),
        Command::Bench(args) => run_bench(&args),
        Command::Permtest(args) => run_permtest(&args),
        Command::Kde(args) => run_kde(&args),
    }
}

fn optional_list(values: &[String]) -> Option<&[String]> {
    if values.is_empty() {
        None
    } else {
        Some(values)
    }
}

fn run_fit(args: &FitArgs) -> CliResult<()> {
    let table = io::read_table(&args.input)?;
    let selectors = Selectors {
        outcome: &args.outcome,
        treatment: args.treatment.as_deref(),
        covariates: optional_list(&args.covariates),
    };
    let (dataset, covariate_names) = io::dataset_from_table(&table, &selectors)?;
    let fitted = ddr_fit(&dataset, args.d, &args.grid.build())?;
    io::save_model(&args.out, &fitted.model, &covariate_names)?;
    let arms: serde_json::Map<String, serde_json::Value> = fitted
        .reports
        .iter()
        .map(|(label, report)| {
            let summary = serde_json::json!({
                "h": report.selected.h,
                "ridge": report.selected.ridge,
                "sigma_multiplier": report.selected.sigma_multiplier,
                "eta": report.selected.eta,
                "cv_loss": report.cv_loss(),
                "eta_loss": report.eta_loss(),
                "warnings": report.warnings,
            });
            (label.clone(), summary)
        })
        .collect();
    let summary = serde_json::json!({
        "model": args.out.display().to_string(),
        "arms": arms,
    });
    println!("{summary}");
    Ok(())
}

fn run_predict(args: &PredictArgs) -> CliResult<()> {
    let (model, covariate_names) = io::load_model(&args.model)?;
    let arm = match &args.arm {
        Some(label) => label.clone(),
        None => match model.single_arm() {
            Some((label, _)) => label.to_string(),
            None => {
                return Err(CliError::new(
                    "unknown_arm",
                    format!(
                        "model has arms [{}]; pick one with --arm",
                        model.arm_labels().join(", ")
                    ),
                ));
            }
        },
    };
    let table = io::read_table(&args.queries)?;
    let queries = io::queries_from_table(&table, &covariate_names)?;
    let estimates = ddr_core::ddr_predict(&model, &arm, &queries)?;
    io::emit_densities(&queries, &estimates, &args.out, args.format.into())?;
    let summary = serde_json::json!({
        "arm": arm,
        "queries": estimates.len(),
        "grid_points": estimates[0].grid.len(),
        "out": args.out.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

fn parse_kinds(spec: &str) -> CliResult<Vec<ModelKind>> {
    if spec.trim() == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    spec.split(',')
        .map(|part| {
            part.trim()
                .parse::<ModelKind>()
                .map_err(|e| CliError::new("bad_flag", e.to_string()))
        })
        .collect()
}

fn run_bench(args: &BenchArgs) -> CliResult<()> {
    let kinds = parse_kinds(&args.kinds)?;
    let config = BenchmarkConfig {
        n: args.n,
        d: args.d,
        test_points: args.test_points,
        record_timing: !args.no_timing,
    };
    let results = run_benchmark(
        &kinds,
        &args.dims,
        args.reps,
        &config,
        &args.grid.build(),
        args.seed,
    )?;
    let csv = ddr_core::benchmark_csv(&results);
    std::fs::write(&args.out, csv)
        .map_err(|e| CliError::new("io", format!("cannot write '{}': {e}", args.out.display())))?;
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    let summary = serde_json::json!({
        "rows": results.len(),
        "failures": failures,
        "out": args.out.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

fn run_permtest(args: &PermtestArgs) -> CliResult<()> {
    let table = io::read_table(&args.input)?;
    let selectors = Selectors {
        outcome: &args.outcome,
        treatment: Some(&args.treatment),
        covariates: optional_list(&args.covariates),
    };
    let (dataset, covariate_names) = io::dataset_from_table(&table, &selectors)?;
    let labels = dataset.arm_labels();
    if labels.len() != 2 && (args.arm0.is_none() || args.arm1.is_none()) {
        return Err(CliError::new(
            "bad_flag",
            format!(
                "treatment column has {} labels; pass --arm0 and --arm1 to pick two",
                labels.len()
            ),
        ));
    }
    let arm0 = args.arm0.clone().unwrap_or_else(|| labels[0].clone());
    let arm1 = args.arm1.clone().unwrap_or_else(|| labels[1].clone());

    let query_table = io::read_table(&args.query)?;
    if query_table.rows.len() != 1 {
        return Err(CliError::new(
            "bad_query",
            format!(
                "permutation test needs exactly one query row, got {}",
                query_table.rows.len()
            ),
        ));
    }
    let queries = io::queries_from_table(&query_table, &covariate_names)?;

    let fitted = ddr_fit(&dataset, args.d, &args.grid.build())?;
    let result = permutation_test(
        &dataset,
        &fitted.model,
        &arm0,
        &arm1,
        &queries.row(0),
        args.b,
        args.seed,
    )?;
    let mut summary = serde_json::json!({
        "statistic": result.statistic,
        "p_value": result.p_value,
        "b": result.b,
        "seed": result.seed,
        "arm0": arm0,
        "arm1": arm1,
    });
    if args.emit_permutations {
        summary["permutations"] = serde_json::json!(result.permuted_statistics);
    }
    println!("{summary}");
    Ok(())
}

fn run_kde(args: &KdeArgs) -> CliResult<()> {
    let table = io::read_table(&args.input)?;
    let outcome_idx = table.column_index(&args.outcome)?;
    if table.rows.len() < 2 {
        return Err(CliError::new(
            "too_few_rows",
            format!("need at least 2 data rows, got {}", table.rows.len()),
        ));
    }
    let mut outcome = Array1::zeros(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        if outcome_idx >= row.len() {
            return Err(CliError::new(
                "csv",
                format!("row {} is shorter than the header", r + 2),
            ));
        }
        outcome[r] = io::parse_cell(&row[outcome_idx], r, &args.outcome)?;
    }
    let grid = make_grid(&outcome, args.d)?;
    let fit = kde_ucv(&outcome, &grid)?;
    let queries = Array2::zeros((1, 0));
    io::emit_densities(&queries, &[fit.estimate], &args.out, args.format.into())?;
    let ucv_loss = fit
        .ucv_curve
        .iter()
        .map(|s| s.ucv)
        .fold(f64::INFINITY, f64::min);
    let summary = serde_json::json!({
        "bandwidth": fit.bandwidth,
        "ucv_loss": ucv_loss,
        "out": args.out.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}
