//! Synthetic generative models with analytic conditional densities, and a
//! replication harness that scores fits by true MISE against those oracles.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::ddr::{ddr_fit, predict_with_arm, HyperparameterGrid};
use crate::error::{invalid, Result};
use crate::loss::true_mise;

/// The four generative families. Every family regresses on the first one or
/// two covariates and ignores the rest, so raising `p` adds pure noise
/// dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Y = x1 + N(0, 0.1^2).
    Homoskedastic,
    /// Y = x1 + N(0, (0.1(|x2| + 0.5))^2).
    Heteroskedastic,
    /// Y drawn from N(x1, 0.1^2) or N(x2, 0.1^2) with equal probability.
    Bimodal,
    /// Y = x1 + Gamma(shape 2, scale 0.4).
    Skewed,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Homoskedastic,
        ModelKind::Heteroskedastic,
        ModelKind::Bimodal,
        ModelKind::Skewed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Homoskedastic => "homoskedastic",
            ModelKind::Heteroskedastic => "heteroskedastic",
            ModelKind::Bimodal => "bimodal",
            ModelKind::Skewed => "skewed",
        }
    }

    fn id(self) -> u64 {
        match self {
            ModelKind::Homoskedastic => 0,
            ModelKind::Heteroskedastic => 1,
            ModelKind::Bimodal => 2,
            ModelKind::Skewed => 3,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = crate::error::DdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homoskedastic" => Ok(ModelKind::Homoskedastic),
            "heteroskedastic" => Ok(ModelKind::Heteroskedastic),
            "bimodal" => Ok(ModelKind::Bimodal),
            "skewed" => Ok(ModelKind::Skewed),
            other => Err(invalid(format!(
                "unknown model kind '{other}' (expected homoskedastic, heteroskedastic, bimodal, or skewed)"
            ))),
        }
    }
}

/// One generative configuration: a family, a covariate dimension, and a
/// sample count.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SyntheticModel {
    pub kind: ModelKind,
    pub p: usize,
    pub n: usize,
}

impl SyntheticModel {
    /// Default sample count used throughout the benchmark.
    pub const DEFAULT_N: usize = 200;

    pub fn new(kind: ModelKind, p: usize, n: usize) -> Result<Self> {
        if p < 2 {
            return Err(invalid(format!(
                "covariate dimension must be at least 2 (models reference x1 and x2), got {p}"
            )));
        }
        if n < 2 {
            return Err(invalid(format!("sample count must be at least 2, got {n}")));
        }
        Ok(SyntheticModel { kind, p, n })
    }
}

/// Mixes `parts` into `master` with the splitmix64 finalizer, giving each
/// (kind, dimension, replication, stream) task its own reproducible seed
/// independent of scheduling order.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut state = splitmix64(master);
    for &part in parts {
        state = splitmix64(state ^ part);
    }
    state
}

fn draw_outcome(kind: ModelKind, x1: f64, x2: f64, rng: &mut ChaCha8Rng) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    match kind {
        ModelKind::Homoskedastic => x1 + 0.1 * std_normal.sample(rng),
        ModelKind::Heteroskedastic => x1 + 0.1 * (x2.abs() + 0.5) * std_normal.sample(rng),
        ModelKind::Bimodal => {
            let mean = if rng.random::<bool>() { x1 } else { x2 };
            mean + 0.1 * std_normal.sample(rng)
        }
        ModelKind::Skewed => {
            let gamma = Gamma::new(2.0, 0.4).expect("valid gamma");
            x1 + gamma.sample(rng)
        }
    }
}

/// Draws a dataset from the model: covariates iid standard normal, outcome
/// per the family. Bitwise deterministic given the seed.
pub fn sample(model: SyntheticModel, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut xs = Vec::with_capacity(model.n * model.p);
    for _ in 0..model.n * model.p {
        xs.push(std_normal.sample(&mut rng));
    }
    let x = Array2::from_shape_vec((model.n, model.p), xs).expect("shape matches");
    let mut y = Array1::zeros(model.n);
    for i in 0..model.n {
        y[i] = draw_outcome(model.kind, x[(i, 0)], x[(i, 1)], &mut rng);
    }
    Dataset::new(x, y, None)
}

fn normal_pdf(z: f64, mean: f64, sd: f64) -> f64 {
    let u = (z - mean) / sd;
    (-0.5 * u * u).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sd)
}

/// The analytic conditional density f(z | x) for the model kind.
pub fn oracle_density(model: SyntheticModel, x: &ArrayView1<f64>, z: f64) -> f64 {
    let x1 = x[0];
    let x2 = x[1];
    match model.kind {
        ModelKind::Homoskedastic => normal_pdf(z, x1, 0.1),
        ModelKind::Heteroskedastic => normal_pdf(z, x1, 0.1 * (x2.abs() + 0.5)),
        ModelKind::Bimodal => 0.5 * normal_pdf(z, x1, 0.1) + 0.5 * normal_pdf(z, x2, 0.1),
        ModelKind::Skewed => {
            // Gamma(shape 2, scale 0.4) density of the residual z - x1:
            // u * exp(-u / 0.4) / 0.4^2 on u > 0.
            let u = z - x1;
            if u <= 0.0 {
                0.0
            } else {
                u * (-u / 0.4).exp() / 0.16
            }
        }
    }
}

/// One replication's outcome. `mise` is present exactly when `error` is not.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkResult {
    pub kind: ModelKind,
    pub p: usize,
    pub rep: usize,
    pub seed: u64,
    pub mise: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Sweep-wide settings for [`run_benchmark`].
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkConfig {
    /// Training samples per replication.
    pub n: usize,
    /// Evaluation grid size.
    pub d: usize,
    /// Fresh covariate draws used to Monte Carlo the MISE integral.
    pub test_points: usize,
    /// When false, the seconds column is reported as zero so that output
    /// files are byte-identical across machines and parallelism degrees.
    pub record_timing: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n: SyntheticModel::DEFAULT_N,
            d: 200,
            test_points: 200,
            record_timing: true,
        }
    }
}

fn run_one(
    kind: ModelKind,
    p: usize,
    rep: usize,
    config: &BenchmarkConfig,
    hpgrid: &HyperparameterGrid,
    master_seed: u64,
) -> BenchmarkResult {
    let start = Instant::now();
    let train_seed = derive_seed(master_seed, &[kind.id(), p as u64, rep as u64, 0]);
    let test_seed = derive_seed(master_seed, &[kind.id(), p as u64, rep as u64, 1]);
    let outcome = (|| -> Result<f64> {
        let model = SyntheticModel::new(kind, p, config.n)?;
        let train = sample(model, train_seed)?;
        let fitted = ddr_fit(&train, config.d, hpgrid)?;
        let (_, arm) = fitted
            .model
            .single_arm()
            .expect("untreated sample yields a single arm");

        let mut rng = ChaCha8Rng::seed_from_u64(test_seed);
        let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut xs = Vec::with_capacity(config.test_points * p);
        for _ in 0..config.test_points * p {
            xs.push(std_normal.sample(&mut rng));
        }
        let x_test = Array2::from_shape_vec((config.test_points, p), xs).expect("shape matches");

        // Every prediction shares the arm's un-standardized grid, so score on
        // that grid directly.
        let predictions = predict_with_arm(arm, &x_test)?;
        let grid = predictions[0].grid.clone();
        let mut row = 0usize;
        let model_density = |_x: ArrayView1<f64>| {
            let values = predictions[row].values.clone();
            row += 1;
            values
        };
        true_mise(
            model_density,
            |z, x| oracle_density(model, &x, z),
            &x_test,
            &grid,
        )
    })();
    let seconds = if config.record_timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    match outcome {
        Ok(mise) => BenchmarkResult {
            kind,
            p,
            rep,
            seed: train_seed,
            mise: Some(mise),
            seconds,
            error: None,
        },
        Err(e) => BenchmarkResult {
            kind,
            p,
            rep,
            seed: train_seed,
            mise: None,
            seconds,
            error: Some(e.to_string()),
        },
    }
}

/// Runs `reps` replications of every (kind, dimension) pair in parallel.
///
/// Each replication samples a training set, fits the full pipeline, and
/// scores it by true MISE on a fresh covariate test set. Per-replication
/// failures are recorded in the result rather than aborting the sweep.
/// Results are sorted by (kind, p, rep) and seeds are derived from the
/// master seed per task, so output is independent of scheduling.
pub fn run_benchmark(
    kinds: &[ModelKind],
    dims: &[usize],
    reps: usize,
    config: &BenchmarkConfig,
    hpgrid: &HyperparameterGrid,
    seed: u64,
) -> Result<Vec<BenchmarkResult>> {
    if reps == 0 {
        return Err(invalid("replication count must be at least 1"));
    }
    if kinds.is_empty() || dims.is_empty() {
        return Err(invalid("benchmark needs at least one kind and one dimension"));
    }
    if let Some(&bad) = dims.iter().find(|&&p| p < 2) {
        return Err(invalid(format!(
            "covariate dimension must be at least 2 (models reference x1 and x2), got {bad}"
        )));
    }
    let mut tasks = Vec::new();
    for &kind in kinds {
        for &p in dims {
            for rep in 0..reps {
                tasks.push((kind, p, rep));
            }
        }
    }
    let mut results: Vec<BenchmarkResult> = tasks
        .par_iter()
        .map(|&(kind, p, rep)| run_one(kind, p, rep, config, hpgrid, seed))
        .collect();
    results.sort_by(|a, b| {
        (a.kind, a.p, a.rep).cmp(&(b.kind, b.p, b.rep))
    });
    Ok(results)
}

fn csv_field(text: &str) -> String {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// Renders results as CSV with header `kind,p,rep,seed,mise,seconds,error`.
/// Numeric cells use a fixed exponent format so equal inputs give equal bytes.
pub fn benchmark_csv(results: &[BenchmarkResult]) -> String {
    let mut out = String::from("kind,p,rep,seed,mise,seconds,error\n");
    for r in results {
        let mise = r.mise.map(|m| format!("{m:.16e}")).unwrap_or_default();
        let error = r.error.as_deref().map(csv_field).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.kind, r.p, r.rep, r.seed, mise, r.seconds, error
        ));
    }
    out
}
