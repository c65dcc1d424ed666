use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scores::{anova_f, label_correlation, mutual_information};
use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig};
use crate::NUM_CLASSES;

pub const METHODS: [&str; 5] = [
    "rf_impurity",
    "et_impurity",
    "mutual_info",
    "anova_f",
    "abs_pearson",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    pub mi_bins: usize,
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            mi_bins: 10,
            n_trees: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub feature_names: Vec<String>,
    pub methods: Vec<String>,
    /// Per-method scores as computed, except that infinite values have been
    /// replaced by the method's largest finite score.
    pub raw: Vec<Vec<f64>>,
    /// Per-method min-max normalized scores in `[0, 1]`.
    pub normalized: Vec<Vec<f64>>,
    /// Mean of the normalized vectors.
    pub consensus: Vec<f64>,
    /// Feature indices by descending consensus, ties by index.
    pub ranking: Vec<usize>,
    /// `(method, feature)` pairs whose raw score was infinite.
    pub saturated: Vec<(usize, usize)>,
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Min-max normalizes every method, averages them and ranks the features.
///
/// Infinite entries are first mapped to the method's largest finite value (or
/// 0 when none is finite). A method that is constant after that normalizes to
/// all zeros and so adds nothing to any feature.
pub fn consensus_rank(
    feature_names: Vec<String>,
    methods: Vec<(String, Vec<f64>)>,
) -> Result<ImportanceTable> {
    let d = feature_names.len();
    if methods.is_empty() {
        return Err(Error::invalid("consensus needs at least one method"));
    }
    let mut saturated = Vec::new();
    let mut raw = Vec::with_capacity(methods.len());
    let mut names = Vec::with_capacity(methods.len());
    for (m, (name, mut v)) in methods.into_iter().enumerate() {
        if v.len() != d {
            return Err(Error::shape(
                "consensus_rank",
                format!("method {name} has {} scores for {d} features", v.len()),
            ));
        }
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::invalid(format!("method {name} produced NaN scores")));
        }
        let cap = v
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let cap = if cap.is_finite() { cap } else { 0.0 };
        for (j, x) in v.iter_mut().enumerate() {
            if x.is_infinite() {
                saturated.push((m, j));
                *x = if *x > 0.0 { cap } else { 0.0 };
            }
        }
        names.push(name);
        raw.push(v);
    }
    let normalized: Vec<Vec<f64>> = raw.iter().map(|v| min_max(v)).collect();
    let k = normalized.len() as f64;
    let consensus: Vec<f64> = (0..d)
        .map(|j| normalized.iter().map(|v| v[j]).sum::<f64>() / k)
        .collect();
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| consensus[b].total_cmp(&consensus[a]).then(a.cmp(&b)));
    Ok(ImportanceTable {
        feature_names,
        methods: names,
        raw,
        normalized,
        consensus,
        ranking,
        saturated,
    })
}

/// Runs the five scorers on the given rows of `table` and combines them.
pub fn compute_importance(
    table: &FeatureTable,
    idx: &[usize],
    cfg: &ImportanceConfig,
) -> Result<ImportanceTable> {
    if idx.is_empty() {
        return Err(Error::invalid("importance needs at least one sample"));
    }
    let rows = table.gather_rows(idx);
    let labels = table.gather_labels(idx);
    let d = table.n_features();
    let rf = ForestConfig {
        n_trees: cfg.n_trees,
        ..ForestConfig::random_forest(crate::seed::derive(cfg.seed, "importance_rf", 0))
    };
    let et = ForestConfig {
        n_trees: cfg.n_trees,
        ..ForestConfig::extra_trees(crate::seed::derive(cfg.seed, "importance_et", 0))
    };
    let rf_imp = fit_forest(&rows, &labels, NUM_CLASSES, &rf)?.impurity_importance();
    let et_imp = fit_forest(&rows, &labels, NUM_CLASSES, &et)?.impurity_importance();
    let per_feature: Vec<(f64, f64, f64)> = (0..d)
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = rows.chunks_exact(d).map(|r| r[j]).collect();
            Ok((
                mutual_information(&col, &labels, NUM_CLASSES, cfg.mi_bins)?,
                anova_f(&col, &labels, NUM_CLASSES)?,
                label_correlation(&col, &labels)?.abs(),
            ))
        })
        .collect::<Result<_>>()?;
    let methods = vec![
        (METHODS[0].to_string(), rf_imp),
        (METHODS[1].to_string(), et_imp),
        (
            METHODS[2].to_string(),
            per_feature.iter().map(|t| t.0).collect(),
        ),
        (
            METHODS[3].to_string(),
            per_feature.iter().map(|t| t.1).collect(),
        ),
        (
            METHODS[4].to_string(),
            per_feature.iter().map(|t| t.2).collect(),
        ),
    ];
    consensus_rank(table.feature_names().to_vec(), methods)
}

impl ImportanceTable {
    /// `(feature name, consensus)` for the `k` best features.
    pub fn top(&self, k: usize) -> Vec<(&str, f64)> {
        self.ranking
            .iter()
            .take(k)
            .map(|&j| (self.feature_names[j].as_str(), self.consensus[j]))
            .collect()
    }

    /// CSV with one row per feature in rank order: name, the normalized score
    /// of each method, consensus and 1-based rank.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["feature".to_string()];
        header.extend(self.methods.iter().cloned());
        header.extend(["consensus".to_string(), "rank".to_string()]);
        w.write_record(&header)?;
        for (rank, &j) in self.ranking.iter().enumerate() {
            let mut rec = vec![self.feature_names[j].clone()];
            rec.extend(self.normalized.iter().map(|v| v[j].to_string()));
            rec.push(self.consensus[j].to_string());
            rec.push((rank + 1).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}
