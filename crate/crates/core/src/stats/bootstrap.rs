use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for accuracy. Each resample draws, within
/// every class, as many cases with replacement as that class contributes.
pub fn bootstrap_ci(
    predictions: &[usize],
    labels: &[usize],
    n_resamples: usize,
    level: f64,
    seed_: u64,
) -> Result<ConfidenceInterval> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::invalid(
            "bootstrap needs equal-length, nonempty predictions and labels",
        ));
    }
    if n_resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(
            "bootstrap needs n_resamples >= 1 and level in (0, 1)",
        ));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let strata: Vec<Vec<bool>> = (0..classes)
        .map(|c| {
            labels
                .iter()
                .zip(predictions)
                .filter(|(&y, _)| y == c)
                .map(|(y, p)| y == p)
                .collect()
        })
        .filter(|s: &Vec<bool>| !s.is_empty())
        .collect();
    let n = labels.len() as f64;
    let mut rng = seed::child_rng(seed_, "bootstrap", 0);
    let mut accs: Vec<f64> = (0..n_resamples)
        .map(|_| {
            let hits: usize = strata
                .iter()
                .map(|s| {
                    (0..s.len())
                        .filter(|_| s[rng.random_range(0..s.len())])
                        .count()
                })
                .sum();
            hits as f64 / n
        })
        .collect();
    accs.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        lower: quantile(&accs, alpha),
        upper: quantile(&accs, 1.0 - alpha),
        level,
    })
}
