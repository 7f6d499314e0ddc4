//! Running per-dimension mean/variance and the sigmoid normalization built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-pass mean and sum of squared deviations, one entry per descriptor dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfordState {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelfordState {
    pub fn new(dim: usize) -> Self {
        WelfordState {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn update(&mut self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.dim() {
            return Err(Error::config(format!(
                "descriptor has {} dimensions, statistics track {}",
                raw.len(),
                self.dim()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(raw) {
            let delta = x - *mean;
            *mean += delta / n;
            // (x - old_mean) * (x - new_mean) is never negative.
            *m2 += delta * (x - *mean);
        }
        Ok(())
    }

    /// Sample variance per dimension; `None` below two observations.
    pub fn variance(&self) -> Option<Vec<f64>> {
        if self.count < 2 {
            return None;
        }
        let denom = (self.count - 1) as f64;
        Some(self.m2.iter().map(|m2| m2 / denom).collect())
    }

    fn std_dev(&self, dim: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2[dim] / (self.count - 1) as f64).sqrt()
    }

    /// Map a raw vector through the z-score then the logistic sigmoid.
    ///
    /// Dimensions with zero (or undefined) spread map to 0.5.
    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(Error::config(format!(
                "descriptor has {} dimensions, statistics track {}",
                raw.len(),
                self.dim()
            )));
        }
        Ok(raw
            .iter()
            .enumerate()
            .map(|(d, &x)| {
                let sigma = self.std_dev(d);
                let z = if sigma > 0.0 && sigma.is_finite() {
                    (x - self.mean[d]) / sigma
                } else {
                    0.0
                };
                sigmoid(z)
            })
            .collect())
    }
}

/// Logistic function, clamped so the result stays strictly inside (0,1).
pub fn sigmoid(z: f64) -> f64 {
    // Beyond |z| ~ 36.7 the f64 result rounds to exactly 1.0 (or underflows toward 0).
    let z = z.clamp(-36.0, 36.0);
    1.0 / (1.0 + (-z).exp())
}
