//! Held-out ranking evaluation of proxy strategies.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{kmedoids_select, ridge_baseline, Predictor};
use super::{greedy_select, CalibrationMatrix, ObjectiveWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    /// Greedy column subset, unweighted mean predictor.
    CssMean { weights: ObjectiveWeights },
    /// PAM medoids, cluster-size-weighted mean predictor.
    KMedoids,
    /// Uniform random subset, ridge predictor.
    RandomRidge { lambda: f64 },
    /// Every column, unweighted mean. Reproduces the truth by construction.
    FullMean,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::CssMean { .. } => "css_mean",
            Strategy::KMedoids => "kmedoids",
            Strategy::RandomRidge { .. } => "random_ridge",
            Strategy::FullMean => "full_mean",
        }
    }

    pub fn fit(&self, calib: &CalibrationMatrix, k_proxy: usize, seed: u64) -> Result<Predictor> {
        match self {
            Strategy::CssMean { weights } => {
                let s = greedy_select(calib, k_proxy, *weights)?;
                Ok(Predictor::Mean { columns: s.selected })
            }
            Strategy::KMedoids => Ok(kmedoids_select(calib, k_proxy, seed)?.1),
            Strategy::RandomRidge { lambda } => Ok(ridge_baseline(calib, k_proxy, *lambda, seed)?.1),
            Strategy::FullMean => Ok(Predictor::Mean {
                columns: (0..calib.n()).collect(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// One side had no rank variation; `rho` is reported as 0.
    pub degenerate: bool,
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Spearman {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let constant = |r: &[f64]| r.windows(2).all(|w| w[0] == w[1]);
    if x.len() < 2 || constant(&rx) || constant(&ry) {
        return Spearman {
            rho: 0.0,
            degenerate: true,
        };
    }
    Spearman {
        rho: super::pearson(&rx, &ry),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvaluation {
    pub strategy: String,
    pub n_init: usize,
    pub k_proxy: usize,
    pub mean_rho: f64,
    pub per_split: Vec<f64>,
    pub degenerate_splits: usize,
}

/// Mix a split index into the base seed (SplitMix64 finalizer).
pub(crate) fn split_seed(seed: u64, split: u64) -> u64 {
    let mut z = seed ^ split.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per split: draw `n_init` calibration rows, fit the strategy on them, predict the
/// held-out rows' full-set means and score the prediction by Spearman ρ.
pub fn evaluate_strategy(
    matrix: &CalibrationMatrix,
    strategy: Strategy,
    n_init: usize,
    k_proxy: usize,
    n_splits: usize,
    seed: u64,
) -> Result<StrategyEvaluation> {
    if n_init >= matrix.m() {
        return Err(Error::precondition(format!(
            "n_init ({n_init}) must be smaller than the number of candidates ({})",
            matrix.m()
        )));
    }
    if n_splits < 1 {
        return Err(Error::precondition("at least one split is required"));
    }
    let truth = matrix.full_means();
    let results: Vec<Result<Spearman>> = (0..n_splits)
        .into_par_iter()
        .map(|split| {
            let s = split_seed(seed, split as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut calib_rows = sample(&mut rng, matrix.m(), n_init).into_vec();
            calib_rows.sort_unstable();
            let held_out: Vec<usize> = (0..matrix.m()).filter(|i| !calib_rows.contains(i)).collect();
            let predictor = strategy.fit(&matrix.select_rows(&calib_rows), k_proxy, s)?;
            let predicted: Vec<f64> = held_out.iter().map(|&i| predictor.predict(matrix.row(i))).collect();
            let actual: Vec<f64> = held_out.iter().map(|&i| truth[i]).collect();
            Ok(spearman(&predicted, &actual))
        })
        .collect();
    let mut per_split = Vec::with_capacity(n_splits);
    let mut degenerate_splits = 0;
    for r in results {
        let r = r?;
        if r.degenerate {
            degenerate_splits += 1;
        }
        per_split.push(r.rho);
    }
    Ok(StrategyEvaluation {
        strategy: strategy.name().to_string(),
        n_init,
        k_proxy,
        mean_rho: per_split.iter().sum::<f64>() / n_splits as f64,
        per_split,
        degenerate_splits,
    })
}
