use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapleyConfig {
    /// Permutations per explained sample. With antithetic sampling this is
    /// rounded up to an even number.
    pub n_permutations: usize,
    /// Pair each permutation with its reverse.
    pub antithetic: bool,
    pub seed: u64,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            n_permutations: 2000,
            antithetic: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub target_class: usize,
    pub phi: Vec<f64>,
    /// Monte-Carlo standard error of each `phi` entry.
    pub std_error: Vec<f64>,
    /// Model output for the explained sample.
    pub prediction: f64,
    /// Model output for the background reference.
    pub base_value: f64,
    /// `Σ phi − (prediction − base_value)`.
    pub efficiency_residual: f64,
    pub n_permutations: usize,
}

impl ShapleyReport {
    /// Standard error of `Σ phi` assuming independent per-feature errors.
    pub fn total_std_error(&self) -> f64 {
        self.std_error.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Column means of row-major `rows`.
pub fn background_mean(rows: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || rows.is_empty() || rows.len() % d != 0 {
        return Err(Error::shape(
            "background_mean",
            format!("{} values for width {d}", rows.len()),
        ));
    }
    let n = (rows.len() / d) as f64;
    let mut m = vec![0.0; d];
    for r in rows.chunks_exact(d) {
        m.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    m.iter_mut().for_each(|v| *v /= n);
    Ok(m)
}

const PERMS_PER_CALL: usize = 16;

/// Permutation-sampling Shapley estimate for one sample.
///
/// `predict` maps row-major rows to row-major class probabilities
/// (`classes` per row). Features outside a coalition take their
/// `background` value. The explained output is the probability of `target`,
/// or of the sample's predicted class when `target` is `None`.
pub fn shapley_mc<P>(
    predict: &P,
    classes: usize,
    sample: &[f64],
    background: &[f64],
    target: Option<usize>,
    cfg: &ShapleyConfig,
) -> Result<ShapleyReport>
where
    P: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    let d = sample.len();
    if d == 0 || background.len() != d {
        return Err(Error::shape(
            "shapley_mc",
            format!("sample width {d}, background width {}", background.len()),
        ));
    }
    if cfg.n_permutations == 0 {
        return Err(Error::invalid("n_permutations must be >= 1"));
    }
    let ends = predict(&[sample, background].concat())?;
    if ends.len() != 2 * classes {
        return Err(Error::shape(
            "shapley_mc",
            format!("predictor returned {} values", ends.len()),
        ));
    }
    let target = target.unwrap_or_else(|| argmax(&ends[..classes]));
    if target >= classes {
        return Err(Error::invalid(format!(
            "target class {target} out of range"
        )));
    }
    let prediction = ends[target];
    let base_value = ends[classes + target];

    let mut rng = seed::rng(cfg.seed);
    let mut perms: Vec<Vec<usize>> = Vec::new();
    if cfg.antithetic {
        for _ in 0..cfg.n_permutations.div_ceil(2) {
            let mut p: Vec<usize> = (0..d).collect();
            p.shuffle(&mut rng);
            let rev: Vec<usize> = p.iter().rev().copied().collect();
            perms.push(p);
            perms.push(rev);
        }
    } else {
        for _ in 0..cfg.n_permutations {
            let mut p: Vec<usize> = (0..d).collect();
            p.shuffle(&mut rng);
            perms.push(p);
        }
    }

    // One contribution vector per permutation.
    let mut contrib: Vec<Vec<f64>> = Vec::with_capacity(perms.len());
    let mut batch = Vec::with_capacity(PERMS_PER_CALL * d * d);
    for chunk in perms.chunks(PERMS_PER_CALL) {
        batch.clear();
        for p in chunk {
            let mut z = background.to_vec();
            for &j in p {
                z[j] = sample[j];
                batch.extend_from_slice(&z);
            }
        }
        let out = predict(&batch)?;
        if out.len() != chunk.len() * d * classes {
            return Err(Error::shape(
                "shapley_mc",
                format!("predictor returned {} values", out.len()),
            ));
        }
        for (pi, p) in chunk.iter().enumerate() {
            let mut c = vec![0.0; d];
            let mut prev = base_value;
            for (k, &j) in p.iter().enumerate() {
                let v = out[(pi * d + k) * classes + target];
                c[j] = v - prev;
                prev = v;
            }
            contrib.push(c);
        }
    }

    // Antithetic pairs are averaged before estimating the variance.
    let units: Vec<Vec<f64>> = if cfg.antithetic {
        contrib
            .chunks_exact(2)
            .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (a + b) / 2.0).collect())
            .collect()
    } else {
        contrib
    };
    let m = units.len() as f64;
    let phi: Vec<f64> = (0..d)
        .map(|j| units.iter().map(|u| u[j]).sum::<f64>() / m)
        .collect();
    let std_error: Vec<f64> = (0..d)
        .map(|j| {
            if units.len() < 2 {
                return 0.0;
            }
            let var = units.iter().map(|u| (u[j] - phi[j]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    let efficiency_residual = phi.iter().sum::<f64>() - (prediction - base_value);
    Ok(ShapleyReport {
        target_class: target,
        phi,
        std_error,
        prediction,
        base_value,
        efficiency_residual,
        n_permutations: perms.len(),
    })
}

/// Explains every row of `rows`, each with its own derived permutation stream.
pub fn shapley_batch<P>(
    predict: &P,
    classes: usize,
    rows: &[f64],
    background: &[f64],
    target: Option<usize>,
    cfg: &ShapleyConfig,
) -> Result<Vec<ShapleyReport>>
where
    P: Fn(&[f64]) -> Result<Vec<f64>> + Sync + ?Sized,
{
    let d = background.len();
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::shape(
            "shapley_batch",
            format!("{} values for width {d}", rows.len()),
        ));
    }
    rows.par_chunks_exact(d)
        .enumerate()
        .map(|(i, row)| {
            let c = ShapleyConfig {
                seed: seed::derive(cfg.seed, "shapley", i as u64),
                ..cfg.clone()
            };
            shapley_mc(predict, classes, row, background, target, &c)
        })
        .collect()
}

/// Mean absolute attribution per feature over a set of reports.
pub fn mean_abs_phi(reports: &[ShapleyReport]) -> Vec<f64> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let n = reports.len() as f64;
    let mut out = vec![0.0; first.phi.len()];
    for r in reports {
        out.iter_mut()
            .zip(&r.phi)
            .for_each(|(o, p)| *o += p.abs() / n);
    }
    out
}
