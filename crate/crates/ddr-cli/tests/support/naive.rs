//! A deliberately plain reimplementation of the whole fitting pipeline, built
//! on nalgebra and explicit loops. Leave-one-out estimates come from actually
//! deleting a row and re-solving, not from any algebraic shortcut, so this is
//! an independent oracle for the production path: same data in, same selected
//! settings and (within float noise) the same densities out.

use nalgebra::DMatrix;

pub struct NaiveModel {
    pub h: f64,
    pub ridge: f64,
    pub sigma_multiplier: f64,
    pub eta: f64,
    pub eta_index: usize,
    /// Evaluation grid in original outcome units.
    pub grid: Vec<f64>,
    /// One normalized, sharpened density per query row, on `grid`.
    pub densities: Vec<Vec<f64>>,
}

fn mean_sd(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mut sum = 0.0;
    for v in y {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for v in y {
        ss += (v - mean) * (v - mean);
    }
    (mean, (ss / (n - 1.0)).sqrt())
}

fn affine_grid(lo: f64, hi: f64, d: usize) -> Vec<f64> {
    let spacing = (hi - lo) / (d - 1) as f64;
    let mut pts: Vec<f64> = (0..d).map(|j| lo + j as f64 * spacing).collect();
    pts[0] = lo;
    pts[d - 1] = hi;
    pts
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sq += d * d;
    }
    sq.sqrt()
}

fn median_distance(x: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(euclid(&x[i], &x[j]));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sq += d * d;
    }
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

fn pulse(z: f64, y: f64, h: f64) -> f64 {
    let u = (z - y) / h;
    (-0.5 * u * u).exp() / ((2.0 * std::f64::consts::PI).sqrt() * h)
}

fn delta_matrix(y_std: &[f64], grid: &[f64], h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(y_std.len(), grid.len(), |i, k| pulse(grid[k], y_std[i], h))
}

fn gram(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| rbf(&a[i], &b[j], bandwidth))
}

fn trapz(values: &[f64], grid: &[f64]) -> f64 {
    let mut auc = 0.0;
    for j in 0..grid.len() - 1 {
        auc += 0.5 * (values[j] + values[j + 1]) * (grid[j + 1] - grid[j]);
    }
    auc
}

fn trapz_sq(values: &[f64], grid: &[f64]) -> f64 {
    let mut auc = 0.0;
    for j in 0..grid.len() - 1 {
        auc += 0.5 * (values[j] * values[j] + values[j + 1] * values[j + 1])
            * (grid[j + 1] - grid[j]);
    }
    auc
}

fn interp(values: &[f64], grid: &[f64], z: f64) -> f64 {
    let d = grid.len();
    if z < grid[0] || z > grid[d - 1] {
        return 0.0;
    }
    let spacing = (grid[d - 1] - grid[0]) / (d - 1) as f64;
    let k = (((z - grid[0]) / spacing).floor() as usize).min(d - 2);
    let t = (z - grid[k]) / (grid[k + 1] - grid[k]);
    values[k] * (1.0 - t) + values[k + 1] * t
}

/// Leave-one-out estimates by brute force: the i-th row is the prediction at
/// x_i of a system re-solved after deleting row i, with the penalty kept at
/// full-sample strength.
fn loo_by_refits(
    k_full: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    ridge: f64,
) -> DMatrix<f64> {
    let n = k_full.nrows();
    let d = targets.ncols();
    let penalty = n as f64 * ridge;
    let mut loo = DMatrix::zeros(n, d);
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let mut reduced = DMatrix::zeros(n - 1, n - 1);
        let mut rhs = DMatrix::zeros(n - 1, d);
        for (a, &ja) in keep.iter().enumerate() {
            for (b, &jb) in keep.iter().enumerate() {
                reduced[(a, b)] = k_full[(ja, jb)];
            }
            reduced[(a, a)] += penalty;
            for c in 0..d {
                rhs[(a, c)] = targets[(ja, c)];
            }
        }
        let coef = reduced.lu().solve(&rhs).expect("reduced system solvable");
        for c in 0..d {
            let mut pred = 0.0;
            for (a, &ja) in keep.iter().enumerate() {
                pred += k_full[(i, ja)] * coef[(a, c)];
            }
            loo[(i, c)] = pred;
        }
    }
    loo
}

fn empirical_criterion(rows: &DMatrix<f64>, y_std: &[f64], grid: &[f64]) -> f64 {
    let n = rows.nrows();
    let mut sq = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        let row: Vec<f64> = rows.row(i).iter().copied().collect();
        sq += trapz_sq(&row, grid);
        cross += interp(&row, grid, y_std[i]);
    }
    sq / n as f64 - 2.0 * cross / n as f64
}

/// Clip at zero and rescale to unit area; all-zero mass falls back to the
/// uniform density on the grid span.
fn normalize(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let auc = trapz(&clipped, grid);
    if auc < 1e-12 {
        let uniform = 1.0 / (grid[grid.len() - 1] - grid[0]);
        return vec![uniform; grid.len()];
    }
    clipped.iter().map(|v| v / auc).collect()
}

fn sharpen(values: &[f64], grid: &[f64], eta: f64) -> Vec<f64> {
    let shifted: Vec<f64> = values.iter().map(|v| v - eta).collect();
    normalize(&shifted, grid)
}

/// Runs the whole pipeline the slow way and predicts at `queries`.
pub fn naive_pipeline(
    x: &[Vec<f64>],
    y: &[f64],
    d: usize,
    h_values: &[f64],
    ridge_values: &[f64],
    sigma_multipliers: &[f64],
    eta_count: usize,
    queries: &[Vec<f64>],
) -> NaiveModel {
    let n = x.len();
    let (location, scale) = mean_sd(y);
    let y_std: Vec<f64> = y.iter().map(|v| (v - location) / scale).collect();
    let lo = y_std.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y_std.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = affine_grid(lo, hi, d);
    let median = median_distance(x);

    let mut h_sorted = h_values.to_vec();
    h_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut ridge_sorted = ridge_values.to_vec();
    ridge_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut sigma_sorted = sigma_multipliers.to_vec();
    sigma_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &h in &h_sorted {
        let targets = delta_matrix(&y_std, &grid, h);
        for &ridge in &ridge_sorted {
            for &sigma in &sigma_sorted {
                let k_full = gram(x, x, sigma * median);
                let loo = loo_by_refits(&k_full, &targets, ridge);
                let loss = empirical_criterion(&loo, &y_std, &grid);
                if best.map(|(bl, _, _, _)| loss < bl).unwrap_or(true) {
                    best = Some((loss, h, ridge, sigma));
                }
            }
        }
    }
    let (_, h, ridge, sigma_multiplier) = best.expect("at least one combination");

    let bandwidth = sigma_multiplier * median;
    let k_full = gram(x, x, bandwidth);
    let targets = delta_matrix(&y_std, &grid, h);
    let loo = loo_by_refits(&k_full, &targets, ridge);
    let max_entry = loo.iter().cloned().fold(0.0f64, f64::max);
    let upper = 0.5 * max_entry;
    let candidates: Vec<f64> = if eta_count == 1 || upper == 0.0 {
        vec![0.0]
    } else {
        (0..eta_count)
            .map(|i| upper * i as f64 / (eta_count - 1) as f64)
            .collect()
    };
    let mut eta = 0.0;
    let mut eta_index = 0;
    let mut best_eta_loss = f64::INFINITY;
    for (idx, &cand) in candidates.iter().enumerate() {
        let mut processed = DMatrix::zeros(n, d);
        for i in 0..n {
            let row: Vec<f64> = loo.row(i).iter().copied().collect();
            let sharp = sharpen(&normalize(&row, &grid), &grid, cand);
            for (k, v) in sharp.iter().enumerate() {
                processed[(i, k)] = *v;
            }
        }
        let loss = empirical_criterion(&processed, &y_std, &grid);
        if loss < best_eta_loss {
            best_eta_loss = loss;
            eta = cand;
            eta_index = idx;
        }
    }

    let penalty = n as f64 * ridge;
    let mut system = k_full.clone();
    for i in 0..n {
        system[(i, i)] += penalty;
    }
    let coef = system.lu().solve(&targets).expect("full system solvable");
    let out_grid: Vec<f64> = affine_grid(location + scale * lo, location + scale * hi, d);
    let mut densities = Vec::with_capacity(queries.len());
    for q in queries {
        let kq = gram(std::slice::from_ref(q), x, bandwidth);
        let raw: Vec<f64> = (0..d)
            .map(|c| {
                let mut v = 0.0;
                for j in 0..n {
                    v += kq[(0, j)] * coef[(j, c)];
                }
                v
            })
            .collect();
        let sharp = sharpen(&normalize(&raw, &grid), &grid, eta);
        densities.push(sharp.iter().map(|v| v / scale).collect());
    }

    NaiveModel {
        h,
        ridge,
        sigma_multiplier,
        eta,
        eta_index,
        grid: out_grid,
        densities,
    }
}
