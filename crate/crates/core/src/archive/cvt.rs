//! Centroid placement for the Voronoi archive and the k-means it relies on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    /// k-means over the normalized calibration descriptors.
    Calibrated,
    /// Cell-centre grid that ignores the calibration points.
    UniformGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    points: Vec<Vec<f64>>,
    mode: PlacementMode,
}

impl Centroids {
    /// Wrap explicit centroid coordinates.
    pub fn from_points(points: Vec<Vec<f64>>, mode: PlacementMode) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::config("at least one centroid is required"));
        };
        let dim = first.len();
        for p in &points {
            if p.len() != dim {
                return Err(Error::config("centroids have inconsistent dimensions"));
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config("centroid coordinates must lie in [0,1]"));
            }
        }
        Ok(Centroids { points, mode })
    }

    pub fn fit(points: &[Vec<f64>], k: usize, mode: PlacementMode, seed: u64) -> Result<Self> {
        if k < 1 {
            return Err(Error::config("number of centroids must be at least 1"));
        }
        match mode {
            PlacementMode::UniformGrid => {
                let dim = points
                    .first()
                    .map(Vec::len)
                    .ok_or_else(|| Error::config("uniform grid needs the descriptor dimension"))?;
                Ok(Centroids {
                    points: uniform_grid(k, dim)?,
                    mode,
                })
            }
            PlacementMode::Calibrated => Ok(Centroids {
                points: calibrated(points, k, seed)?,
                mode,
            }),
        }
    }

    /// Grid placement for a known dimension, without calibration points.
    pub fn grid(k: usize, dim: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::config("number of centroids must be at least 1"));
        }
        Ok(Centroids {
            points: uniform_grid(k, dim)?,
            mode: PlacementMode::UniformGrid,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn mode(&self) -> PlacementMode {
        self.mode
    }

    /// Index of the closest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest(&self.points, x).0
    }
}

fn calibrated(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let Some(first) = points.first() else {
        return Err(Error::precondition(
            "calibrated centroid placement needs at least one point",
        ));
    };
    let dim = first.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::config("calibration points have inconsistent dimensions"));
    }
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(p) {
            distinct.push(p.clone());
        }
    }
    if distinct.len() > k {
        return Ok(kmeans(points, k, seed)?.centroids);
    }
    // k-means with k >= #distinct points converges to the points themselves; the
    // remaining cells are padded with uniform draws so K stays fixed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while distinct.len() < k {
        let p: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    Ok(distinct)
}

fn uniform_grid(k: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 {
        return Err(Error::config("descriptor dimension must be at least 1"));
    }
    // Smallest per-axis resolution g with g^dim >= k.
    let mut g = 1usize;
    while (g as u128).checked_pow(dim as u32).map_or(false, |cells| cells < k as u128) {
        g += 1;
    }
    let mut out = Vec::with_capacity(k);
    let mut idx = vec![0usize; dim];
    while out.len() < k {
        out.push(
            idx.iter()
                .map(|&i| (2 * i + 1) as f64 / (2 * g) as f64)
                .collect(),
        );
        // Odometer increment, last axis fastest.
        for axis in (0..dim).rev() {
            idx[axis] += 1;
            if idx[axis] < g {
                break;
            }
            idx[axis] = 0;
        }
    }
    Ok(out)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn nearest(centres: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centres.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

/// Lloyd iterations from a k-means++ start. Deterministic for a given seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k < 1 {
        return Err(Error::config("k must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::precondition("k-means needs at least one point"));
    }
    let dim = points[0].len();
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut iterations = 0;

    for _ in 0..KMEANS_MAX_ITERS {
        iterations += 1;
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(&centroids, p).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        // Empty clusters take over the point currently farthest from its centre.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&i, &j| {
                    let di = sq_dist(&points[i], &centroids[assignments[i]]);
                    let dj = sq_dist(&points[j], &centroids[assignments[j]]);
                    di.total_cmp(&dj).then(j.cmp(&i))
                });
            if let Some(i) = far {
                let old = assignments[i];
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(&points[i]) {
                    *s -= v;
                }
                assignments[i] = c;
                counts[c] = 1;
                sums[c] = points[i].clone();
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    for (a, p) in assignments.iter_mut().zip(points) {
        *a = nearest(&centroids, p).0;
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        iterations,
    })
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Guard against float drift landing on an existing centre.
            if d2[chosen] == 0.0 {
                chosen = d2
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_two_centroids_is_fixed_point() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let c = Centroids::fit(&pts, 2, PlacementMode::Calibrated, 3).unwrap();
        assert_eq!(c.points(), pts.as_slice());
    }

    #[test]
    fn grid_of_four_in_two_dims() {
        let c = Centroids::grid(4, 2).unwrap();
        // Enumerated by hand: g = 2 per axis, centres at (2i+1)/4.
        let expected = vec![
            vec![0.25, 0.25],
            vec![0.25, 0.75],
            vec![0.75, 0.25],
            vec![0.75, 0.75],
        ];
        assert_eq!(c.points(), expected.as_slice());
        let via_fit =
            Centroids::fit(&[vec![0.9, 0.1]], 4, PlacementMode::UniformGrid, 0).unwrap();
        assert_eq!(via_fit.points(), expected.as_slice());
    }

    #[test]
    fn grid_truncates_to_k() {
        let c = Centroids::grid(50, 6).unwrap();
        assert_eq!(c.len(), 50);
        for p in c.points() {
            assert!(p.iter().all(|&v| v == 0.25 || v == 0.75));
        }
        let c3 = Centroids::grid(5, 2).unwrap();
        // g = 3: thirds of the unit square.
        assert_eq!(c3.points()[0], vec![1.0 / 6.0, 1.0 / 6.0]);
        assert_eq!(c3.points()[4], vec![0.5, 0.5]);
    }

    #[test]
    fn fitting_is_deterministic_per_seed() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).fract(), (i as f64 * 0.61).fract()])
            .collect();
        let a = Centroids::fit(&pts, 5, PlacementMode::Calibrated, 11).unwrap();
        let b = Centroids::fit(&pts, 5, PlacementMode::Calibrated, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn padding_keeps_k_and_distinctness() {
        let pts = vec![vec![0.2, 0.2], vec![0.2, 0.2], vec![0.8, 0.4]];
        let c = Centroids::fit(&pts, 6, PlacementMode::Calibrated, 1).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c.points()[0], vec![0.2, 0.2]);
        assert_eq!(c.points()[1], vec![0.8, 0.4]);
        for i in 0..6 {
            for j in i + 1..6 {
                assert_ne!(c.points()[i], c.points()[j]);
            }
        }
    }

    #[test]
    fn zero_k_rejected() {
        assert!(matches!(
            Centroids::fit(&[vec![0.5]], 0, PlacementMode::Calibrated, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let c = Centroids::from_points(
            vec![
                vec![0.0, 0.0],
                vec![0.5, 0.0],
                vec![1.0, 1.0],
                vec![0.5, 1.0],
            ],
            PlacementMode::Calibrated,
        )
        .unwrap();
        assert_eq!(c.nearest(&[0.1, 0.2]), 0);
        // Equidistant from index 1 and 3.
        assert_eq!(c.nearest(&[0.5, 0.5]), 1);
        assert_eq!(c.nearest(&[1.0, 1.0]), 2);
    }

    #[test]
    fn kmeans_separates_obvious_groups() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.05, 0.0],
            vec![0.9, 0.9],
            vec![1.0, 0.95],
        ];
        let r = kmeans(&pts, 2, 5).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
    }
}
