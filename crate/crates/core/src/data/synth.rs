use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Category, CategoryMap, CategoryRule, FeatureTable, MatchKind};
use crate::error::{Error, Result};
use crate::seed;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub dims: usize,
    pub planted: Category,
    pub separation: f64,
    pub seed: u64,
}

fn prefix(category: Category) -> &'static str {
    match category {
        Category::Statistical => "mean",
        Category::Frequency => "fft",
        Category::Covariance => "covmat",
        Category::Eigenvalue => "eigen",
        Category::Other => "misc",
    }
}

/// Rules that recover the generator's own category layout.
pub fn synth_rules() -> Vec<CategoryRule> {
    [
        Category::Statistical,
        Category::Frequency,
        Category::Covariance,
        Category::Eigenvalue,
    ]
    .into_iter()
    .map(|c| CategoryRule::new(prefix(c), MatchKind::Prefix, c))
    .collect()
}

/// Three Gaussian class clusters whose means differ only on the features of
/// the planted category.
///
/// Features come in contiguous category blocks named `<prefix>_<k>`
/// (`mean_`, `fft_`, `covmat_`, `eigen_`, plus `misc_` when the planted
/// category is `other`). Each planted feature gets class offsets drawn as a
/// random permutation of `{-1, 0, +1} * separation / 2`; every feature then
/// carries unit Gaussian noise and a random affine rescaling so that
/// normalization is exercised. Row order is shuffled.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(FeatureTable, CategoryMap)> {
    if cfg.dims < 8 {
        return Err(Error::invalid(format!(
            "synthetic data needs dims >= 8, got {}",
            cfg.dims
        )));
    }
    if cfg.n_per_class < 10 {
        return Err(Error::invalid(format!(
            "synthetic data needs n_per_class >= 10, got {}",
            cfg.n_per_class
        )));
    }
    if !cfg.separation.is_finite() || cfg.separation < 0.0 {
        return Err(Error::invalid("separation must be finite and >= 0"));
    }

    let mut blocks = vec![
        Category::Statistical,
        Category::Frequency,
        Category::Covariance,
        Category::Eigenvalue,
    ];
    if cfg.planted == Category::Other {
        blocks.push(Category::Other);
    }
    let d = cfg.dims;
    let assignment: Vec<Category> = (0..d).map(|j| blocks[j * blocks.len() / d]).collect();
    let mut counters = [0usize; 5];
    let names: Vec<String> = assignment
        .iter()
        .map(|&c| {
            let k = &mut counters[c as usize];
            *k += 1;
            format!("{}_{}", prefix(c), *k - 1)
        })
        .collect();

    let mut rng = seed::child_rng(cfg.seed, "synth", 0);
    let half = cfg.separation / 2.0;
    let mut class_means = vec![[0.0f64; NUM_CLASSES]; d];
    for (j, means) in class_means.iter_mut().enumerate() {
        if assignment[j] == cfg.planted {
            let mut levels = [-half, 0.0, half];
            levels.shuffle(&mut rng);
            *means = levels;
        }
    }
    let offsets: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
    let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..5.0)).collect();

    let n = cfg.n_per_class * NUM_CLASSES;
    let mut labels: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();
    labels.shuffle(&mut rng);
    let mut values = Vec::with_capacity(n * d);
    for &y in &labels {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(offsets[j] + scales[j] * (class_means[j][y] + z));
        }
    }
    let table = FeatureTable::new(values, names, labels)?;
    Ok((table, CategoryMap { assignment }))
}
