//! Comparison baselines for proxy selection: k-medoids over example columns, and a
//! random subset with a ridge-regression read-out.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CalibrationMatrix;
use crate::error::{Error, Result};

/// Maps a candidate's scores on the chosen columns to a predicted full-set score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// Unweighted mean over `columns`.
    Mean { columns: Vec<usize> },
    /// Fixed convex combination of `columns`.
    Weighted { columns: Vec<usize>, weights: Vec<f64> },
    /// `intercept + Σ weights[i] * row[columns[i]]`.
    Linear {
        columns: Vec<usize>,
        intercept: f64,
        weights: Vec<f64>,
        /// Fewer training rows than free parameters.
        underdetermined: bool,
    },
}

impl Predictor {
    pub fn columns(&self) -> &[usize] {
        match self {
            Predictor::Mean { columns }
            | Predictor::Weighted { columns, .. }
            | Predictor::Linear { columns, .. } => columns,
        }
    }

    /// Predict from a full row of per-example scores.
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Predictor::Mean { columns } => {
                let mut cols = columns.clone();
                cols.sort_unstable();
                cols.iter().map(|&j| row[j]).sum::<f64>() / cols.len() as f64
            }
            Predictor::Weighted { columns, weights } => {
                columns.iter().zip(weights).map(|(&j, w)| w * row[j]).sum()
            }
            Predictor::Linear {
                columns,
                intercept,
                weights,
                ..
            } => intercept + columns.iter().zip(weights).map(|(&j, w)| w * row[j]).sum::<f64>(),
        }
    }
}

fn check_k(matrix: &CalibrationMatrix, k: usize) -> Result<()> {
    if k < 1 || k > matrix.n() {
        return Err(Error::config(format!(
            "proxy size {k} must be between 1 and the number of examples ({})",
            matrix.n()
        )));
    }
    Ok(())
}

fn column_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per point: slot of the nearest medoid, its distance, and the second-nearest distance.
fn nearest_two(dist: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = dist.len();
    let mut near = vec![0usize; n];
    let mut d1 = vec![f64::INFINITY; n];
    let mut d2 = vec![f64::INFINITY; n];
    for p in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let d = dist[p][m];
            if d < d1[p] {
                d2[p] = d1[p];
                d1[p] = d;
                near[p] = slot;
            } else if d < d2[p] {
                d2[p] = d;
            }
        }
    }
    (near, d1, d2)
}

/// PAM (BUILD then best-improvement SWAP) over the columns of `matrix` as points in
/// candidate-score space. Medoids become the subset; the predictor weights each
/// medoid by the fraction of columns in its cluster.
///
/// The seed only fixes the order in which columns are considered, which decides ties
/// between equal-cost configurations.
pub fn kmedoids_select(matrix: &CalibrationMatrix, k: usize, seed: u64) -> Result<(Vec<usize>, Predictor)> {
    check_k(matrix, k)?;
    let n = matrix.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cols: Vec<Vec<f64>> = order.iter().map(|&j| matrix.column(j)).collect();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| column_distance(&cols[a], &cols[b])).collect())
        .collect();

    // BUILD: greedily add the point that lowers total cost the most.
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best = (usize::MAX, f64::INFINITY);
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let cost: f64 = (0..n).map(|p| nearest[p].min(dist[p][c])).sum();
            if cost < best.1 {
                best = (c, cost);
            }
        }
        medoids.push(best.0);
        for p in 0..n {
            nearest[p] = nearest[p].min(dist[p][best.0]);
        }
    }

    // SWAP: apply the single best medoid/non-medoid exchange until none helps. The
    // cost change of a swap only needs each point's nearest and second-nearest medoid.
    loop {
        let (near, d1, d2) = nearest_two(&dist, &medoids);
        let mut best_swap: Option<(usize, usize, f64)> = None;
        for mi in 0..k {
            for c in 0..n {
                if medoids.contains(&c) {
                    continue;
                }
                let delta: f64 = (0..n)
                    .map(|p| {
                        let keep = if near[p] == mi { d2[p] } else { d1[p] };
                        keep.min(dist[p][c]) - d1[p]
                    })
                    .sum();
                if delta < best_swap.map_or(-1e-12, |b| b.2) {
                    best_swap = Some((mi, c, delta));
                }
            }
        }
        match best_swap {
            Some((mi, c, _)) => medoids[mi] = c,
            None => break,
        }
    }

    // Cluster sizes: each column joins its nearest medoid, ties to the earliest medoid.
    let mut sizes = vec![0usize; k];
    for p in 0..n {
        let mut best = 0;
        for (i, &m) in medoids.iter().enumerate() {
            if dist[p][m] < dist[p][medoids[best]] {
                best = i;
            }
        }
        sizes[best] += 1;
    }
    let columns: Vec<usize> = medoids.iter().map(|&m| order[m]).collect();
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
    Ok((
        columns.clone(),
        Predictor::Weighted { columns, weights },
    ))
}

/// Random `k` columns (seeded) and a ridge regression from their scores to the
/// full-set row mean. The intercept is fitted but not penalized.
pub fn ridge_baseline(
    matrix: &CalibrationMatrix,
    k: usize,
    lambda: f64,
    seed: u64,
) -> Result<(Vec<usize>, Predictor)> {
    check_k(matrix, k)?;
    if !(lambda > 0.0) {
        return Err(Error::config("ridge lambda must be positive"));
    }
    if matrix.m() < 1 {
        return Err(Error::precondition("ridge needs at least one training row"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<usize> = sample(&mut rng, matrix.n(), k).into_vec();
    let (intercept, weights) = fit_ridge(matrix, &columns, lambda);
    Ok((
        columns.clone(),
        Predictor::Linear {
            columns,
            intercept,
            weights,
            underdetermined: matrix.m() < k + 1,
        },
    ))
}

/// Centred ridge: `w = (XcᵀXc + λI)⁻¹ Xcᵀ yc`, `b = ȳ − x̄·w`.
fn fit_ridge(matrix: &CalibrationMatrix, columns: &[usize], lambda: f64) -> (f64, Vec<f64>) {
    let m = matrix.m();
    let k = columns.len();
    let y = matrix.full_means();
    let y_mean = y.iter().sum::<f64>() / m as f64;
    let x_mean: Vec<f64> = columns
        .iter()
        .map(|&j| (0..m).map(|i| matrix.get(i, j)).sum::<f64>() / m as f64)
        .collect();
    let xc: Vec<Vec<f64>> = (0..m)
        .map(|i| columns.iter().zip(&x_mean).map(|(&j, mu)| matrix.get(i, j) - mu).collect())
        .collect();
    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for (row, yi) in xc.iter().zip(&y) {
        for a in 0..k {
            rhs[a] += row[a] * (yi - y_mean);
            for b in 0..k {
                gram[a][b] += row[a] * row[b];
            }
        }
    }
    for (a, row) in gram.iter_mut().enumerate() {
        row[a] += lambda;
    }
    let w = cholesky_solve(gram, rhs);
    let intercept = y_mean - x_mean.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    (intercept, w)
}

/// Solve `A x = b` for symmetric positive definite `A`.
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for p in 0..j {
            d -= a[j][p] * a[j][p];
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for p in 0..j {
                s -= a[i][p] * a[j][p];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i][p] * b[p];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in i + 1..n {
            s -= a[p][i] * b[p];
        }
        b[i] = s / a[i][i];
    }
    b
}
