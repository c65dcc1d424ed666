//! Random Forest and Extra Trees classifiers with Gini splitting and
//! impurity-based feature importance.

mod tree;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::seed;

pub use tree::{gini, Tree, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Train each tree on a bootstrap resample instead of the full set.
    pub bootstrap: bool,
    /// Draw one uniform threshold per candidate feature instead of searching
    /// all midpoints.
    pub randomized_threshold: bool,
    /// Candidate features per split; `None` means `floor(√D)`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self::random_forest(0)
    }
}

impl ForestConfig {
    pub fn random_forest(seed: u64) -> Self {
        Self {
            n_trees: 100,
            bootstrap: true,
            randomized_threshold: false,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            seed,
        }
    }

    pub fn extra_trees(seed: u64) -> Self {
        Self {
            bootstrap: false,
            randomized_threshold: true,
            ..Self::random_forest(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be >= 1"));
        }
        if self.min_samples_split < 2 || self.min_samples_leaf < 1 {
            return Err(Error::invalid(
                "min_samples_split must be >= 2 and min_samples_leaf >= 1",
            ));
        }
        if self.max_features == Some(0) || self.max_depth == Some(0) {
            return Err(Error::invalid(
                "max_features and max_depth must be positive when set",
            ));
        }
        Ok(())
    }

    fn features_per_split(&self, d: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
            .min(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub classes: usize,
    pub config: ForestConfig,
}

/// Fits a forest on row-major `rows` (`labels.len()` rows). Tree `t` draws
/// from its own stream derived from the forest seed, so the result does not
/// depend on thread scheduling.
pub fn fit_forest(
    rows: &[f64],
    labels: &[usize],
    classes: usize,
    config: &ForestConfig,
) -> Result<Forest> {
    config.validate()?;
    let n = labels.len();
    if n == 0 || rows.is_empty() {
        return Err(Error::invalid("cannot fit a forest on empty input"));
    }
    if rows.len() % n != 0 {
        return Err(Error::shape(
            "fit_forest",
            format!("{} values for {n} labels", rows.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let d = rows.len() / n;
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..n).map(|i| rows[i * d + j]).collect())
        .collect();
    let data = tree::Columns {
        cols: &cols,
        labels,
    };
    let params = tree::TreeParams {
        max_features: config.features_per_split(d),
        max_depth: config.max_depth,
        min_samples_split: config.min_samples_split,
        min_samples_leaf: config.min_samples_leaf,
        randomized_threshold: config.randomized_threshold,
        classes,
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::child_rng(config.seed, "tree", t as u64);
            let samples: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            tree::grow(&data, samples, &params, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        n_features: d,
        classes,
        config: config.clone(),
    })
}

impl Forest {
    /// Mean of the per-tree leaf class distributions, row-major `[n, classes]`.
    pub fn predict_proba(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_features;
        if rows.len() % d != 0 {
            return Err(Error::shape(
                "predict",
                format!("{} values is not a multiple of width {d}", rows.len()),
            ));
        }
        let k = self.classes;
        let scale = 1.0 / self.trees.len() as f64;
        let mut out = vec![0.0; rows.len() / d * k];
        for (row, o) in rows.chunks_exact(d).zip(out.chunks_exact_mut(k)) {
            for t in &self.trees {
                o.iter_mut()
                    .zip(t.leaf_probs(row))
                    .for_each(|(o, p)| *o += p);
            }
            o.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(out)
    }

    /// Argmax of [`Forest::predict_proba`]; ties go to the lowest class.
    pub fn predict(&self, rows: &[f64]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(rows)?
            .chunks(self.classes)
            .map(argmax)
            .collect())
    }

    /// Mean decrease in impurity: per tree, sum `n_node · decrease` by feature
    /// and normalize; average over trees that split at least once; normalize
    /// again. All zeros when no tree ever splits.
    pub fn impurity_importance(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.n_features];
        for t in &self.trees {
            let mut imp = vec![0.0; self.n_features];
            for node in &t.nodes {
                if let TreeNode::Split {
                    feature,
                    impurity_decrease,
                    n_samples,
                    ..
                } = node
                {
                    imp[*feature] += *n_samples as f64 * impurity_decrease;
                }
            }
            let s: f64 = imp.iter().sum();
            if s > 0.0 {
                total.iter_mut().zip(&imp).for_each(|(t, v)| *t += v / s);
            }
        }
        let s: f64 = total.iter().sum();
        if s > 0.0 {
            total.iter_mut().for_each(|v| *v /= s);
        }
        total
    }
}

#[cfg(test)]
mod tests;
