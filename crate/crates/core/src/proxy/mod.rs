//! Rank-preserving proxy benchmark selection.
//!
//! Given the scores of a few calibration candidates on every example, pick a small
//! subset of examples whose mean score orders candidates the way the full set does.
//! Greedy forward selection maximizes
//! `w_rank * R(S ∪ {j}) + w_sep * A(S ∪ {j}) - w_red * C(j, S)` where R is pairwise
//! rank agreement, A is normalized column spread and C is mean absolute correlation
//! with the columns already chosen.

mod baselines;
mod matrix;
mod protocol;

pub use baselines::{kmedoids_select, ridge_baseline, Predictor};
pub use matrix::CalibrationMatrix;
pub(crate) use protocol::split_seed;
pub use protocol::{evaluate_strategy, spearman, Spearman, Strategy, StrategyEvaluation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    #[serde(default = "default_rank")]
    pub rank: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_redundancy")]
    pub redundancy: f64,
}

fn default_rank() -> f64 {
    0.5
}
fn default_separation() -> f64 {
    0.5
}
fn default_redundancy() -> f64 {
    0.15
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            rank: default_rank(),
            separation: default_separation(),
            redundancy: default_redundancy(),
        }
    }
}

/// Agreement credit for one candidate pair.
fn pair_credit(full_a: f64, full_b: f64, proxy_a: f64, proxy_b: f64) -> f64 {
    let full = full_a.partial_cmp(&full_b).expect("finite means");
    let proxy = proxy_a.partial_cmp(&proxy_b).expect("finite means");
    use std::cmp::Ordering::Equal;
    match (full, proxy) {
        (Equal, Equal) => 1.0,
        (Equal, _) | (_, Equal) => 0.5,
        (f, p) if f == p => 1.0,
        _ => 0.0,
    }
}

fn rank_agreement(full: &[f64], proxy: &[f64]) -> f64 {
    let m = full.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..m {
        for b in a + 1..m {
            total += pair_credit(full[a], full[b], proxy[a], proxy[b]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Fraction of candidate pairs ordered the same by the subset mean and the full mean.
/// Two-sided ties agree; a tie on one side only earns half credit.
pub fn rank_faithfulness(matrix: &CalibrationMatrix, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::precondition("rank faithfulness needs a non-empty subset"));
    }
    if matrix.m() < 2 {
        return Err(Error::precondition("rank faithfulness needs at least two candidates"));
    }
    Ok(rank_agreement(&matrix.full_means(), &matrix.subset_means(subset)))
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn column_spread(matrix: &CalibrationMatrix, j: usize, range: f64) -> f64 {
    if range > 0.0 {
        sample_std(&matrix.column(j)) / range
    } else {
        0.0
    }
}

/// Mean over the subset of each column's sample standard deviation, divided by the
/// range of the whole matrix (0 when the matrix is constant).
pub fn separation(matrix: &CalibrationMatrix, subset: &[usize]) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let range = matrix.global_range();
    subset.iter().map(|&j| column_spread(matrix, j, range)).sum::<f64>() / subset.len() as f64
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Mean absolute Pearson correlation of column `j` with the columns in `subset`.
pub fn redundancy(matrix: &CalibrationMatrix, j: usize, subset: &[usize]) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let cj = matrix.column(j);
    subset
        .iter()
        .map(|&i| pearson(&cj, &matrix.column(i)).abs())
        .sum::<f64>()
        / subset.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub column: usize,
    pub example_id: String,
    pub marginal: f64,
    pub rank_faithfulness: f64,
    pub separation: f64,
    pub redundancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySubset {
    /// Column indices in selection order.
    pub selected: Vec<usize>,
    pub selected_ids: Vec<String>,
    pub steps: Vec<SelectionStep>,
    pub rank_faithfulness: f64,
    pub separation: f64,
}

impl ProxySubset {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Greedy forward selection of `k` columns. Ties go to the lowest column index.
pub fn greedy_select(
    matrix: &CalibrationMatrix,
    k: usize,
    weights: ObjectiveWeights,
) -> Result<ProxySubset> {
    let n = matrix.n();
    if k < 1 || k > n {
        return Err(Error::config(format!(
            "proxy size {k} must be between 1 and the number of examples ({n})"
        )));
    }
    if matrix.m() < 2 {
        return Err(Error::precondition("proxy selection needs at least two calibration candidates"));
    }
    let full = matrix.full_means();
    let range = matrix.global_range();
    let spreads: Vec<f64> = (0..n).map(|j| column_spread(matrix, j, range)).collect();
    let columns: Vec<Vec<f64>> = (0..n).map(|j| matrix.column(j)).collect();
    let mut abs_corr_cache: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut in_set = vec![false; n];
    let mut steps = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<SelectionStep> = None;
        for j in 0..n {
            if in_set[j] {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(j);
            let r = rank_agreement(&full, &matrix.subset_means(&trial));
            let mut sorted = trial.clone();
            sorted.sort_unstable();
            let a = sorted.iter().map(|&c| spreads[c]).sum::<f64>() / sorted.len() as f64;
            let c = if selected.is_empty() {
                0.0
            } else {
                selected
                    .iter()
                    .map(|&i| {
                        *abs_corr_cache[j][i]
                            .get_or_insert_with(|| pearson(&columns[j], &columns[i]).abs())
                    })
                    .sum::<f64>()
                    / selected.len() as f64
            };
            let marginal = weights.rank * r + weights.separation * a - weights.redundancy * c;
            if best.as_ref().map_or(true, |b| marginal > b.marginal) {
                best = Some(SelectionStep {
                    column: j,
                    example_id: matrix.col_ids()[j].clone(),
                    marginal,
                    rank_faithfulness: r,
                    separation: a,
                    redundancy: c,
                });
            }
        }
        let step = best.expect("k <= n leaves a column to add");
        in_set[step.column] = true;
        selected.push(step.column);
        steps.push(step);
    }
    let last = steps.last().expect("k >= 1");
    Ok(ProxySubset {
        selected_ids: selected.iter().map(|&j| matrix.col_ids()[j].clone()).collect(),
        rank_faithfulness: last.rank_faithfulness,
        separation: last.separation,
        selected,
        steps,
    })
}
