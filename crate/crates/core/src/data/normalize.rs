use serde::{Deserialize, Serialize};

use super::FeatureTable;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-feature z-score statistics fitted on training rows only.
///
/// Uses the population standard deviation (divide by N). Each feature is
/// mapped to `(x - mean) / (std + epsilon)`, so constant columns map to zero
/// instead of producing non-finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub epsilon: f64,
}

impl Normalizer {
    pub fn fit(table: &FeatureTable, train_idx: &[usize]) -> Result<Self> {
        if train_idx.is_empty() {
            return Err(Error::invalid("cannot fit normalizer on zero rows"));
        }
        let d = table.n_features();
        let n = train_idx.len() as f64;
        let mut means = vec![0.0; d];
        for &i in train_idx {
            for (m, v) in means.iter_mut().zip(table.row(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for &i in train_idx {
            for ((acc, v), m) in vars.iter_mut().zip(table.row(i)).zip(&means) {
                let c = v - m;
                *acc += c * c;
            }
        }
        let stds = vars.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self {
            means,
            stds,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    /// Normalize a row-major block of rows in place.
    pub fn apply_in_place(&self, rows: &mut [f64]) {
        let d = self.means.len();
        debug_assert_eq!(rows.len() % d, 0);
        for row in rows.chunks_exact_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *x = (*x - m) / (s + self.epsilon);
            }
        }
    }

    pub fn apply(&self, rows: &[f64]) -> Vec<f64> {
        let mut out = rows.to_vec();
        self.apply_in_place(&mut out);
        out
    }
}
