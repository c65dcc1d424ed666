use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::split_hash;
use super::{fit_on_split, ExperimentConfig, ModelKind};
use crate::data::{kfold, FeatureTable};
use crate::error::{Error, Result};
use crate::stats::{
    bootstrap_ci, friedman, metrics, overfitting_gap, pairwise_wilcoxon, ConfidenceInterval,
    ConfusionMatrix, Metrics, PairwiseTest, StatTestResult,
};
use crate::train::TrainTrace;
use crate::{seed, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub name: String,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over folds.
    pub std_accuracy: f64,
    pub mean_train_accuracy: f64,
    pub overfitting_gap: f64,
    /// Metrics of the pooled out-of-fold predictions.
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub ci: ConfidenceInterval,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<TrainTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSection {
    pub folds: usize,
    pub split_seed: u64,
    /// One digest per fold over its train and test indices.
    pub split_hashes: Vec<String>,
    /// Model seed used in each fold, shared by every model.
    pub fold_seeds: Vec<u64>,
    pub models: Vec<ModelSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friedman: Option<StatTestResult>,
    pub pairwise: Vec<PairwiseTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (
        m,
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

/// Stratified k-fold comparison of the configured roster. Every model sees
/// the same folds and the same per-fold seed.
pub fn run_comparison(table: &FeatureTable, cfg: &ExperimentConfig) -> Result<ComparisonSection> {
    cfg.validate()?;
    let split_seed = seed::derive(cfg.seed, "folds", 0);
    let folds = kfold(table.labels(), cfg.folds, split_seed)?;
    let fold_seeds: Vec<u64> = (0..folds.len())
        .map(|f| seed::derive(cfg.seed, "fold", f as u64))
        .collect();
    let jobs: Vec<(ModelKind, usize)> = cfg
        .roster
        .iter()
        .flat_map(|&m| (0..folds.len()).map(move |f| (m, f)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(m, f)| {
            log::info!("{m}: fold {}/{}", f + 1, folds.len());
            fit_on_split(m, table, &folds[f], cfg, fold_seeds[f]).map_err(|e| Error::Fold {
                model: m.to_string(),
                fold: f + 1,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut models = Vec::with_capacity(cfg.roster.len());
    for (mi, &kind) in cfg.roster.iter().enumerate() {
        let per_fold = &results[mi * folds.len()..(mi + 1) * folds.len()];
        let fold_accuracies: Vec<f64> = per_fold.iter().map(|r| r.test_acc).collect();
        let train_accs: Vec<f64> = per_fold.iter().map(|r| r.train_acc).collect();
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for (r, split) in per_fold.iter().zip(&folds) {
            labels.extend(table.gather_labels(&split.test));
            preds.extend_from_slice(&r.predictions);
        }
        let confusion = ConfusionMatrix::from_predictions(&labels, &preds, NUM_CLASSES)?;
        let ci = bootstrap_ci(
            &preds,
            &labels,
            cfg.bootstrap_resamples,
            cfg.ci_level,
            seed::derive(cfg.seed, &format!("ci/{kind}"), 0),
        )?;
        let (mean_accuracy, std_accuracy) = mean_std(&fold_accuracies);
        let (mean_train_accuracy, _) = mean_std(&train_accs);
        models.push(ModelSummary {
            model: kind,
            name: kind.display_name().to_string(),
            mean_accuracy,
            std_accuracy,
            mean_train_accuracy,
            overfitting_gap: overfitting_gap(mean_train_accuracy, mean_accuracy),
            metrics: metrics(&confusion)?,
            confusion,
            ci,
            traces: per_fold
                .iter()
                .filter_map(|r| r.fitted.trace().cloned())
                .collect(),
            fold_accuracies,
        });
    }

    let scores: Vec<Vec<f64>> = models.iter().map(|m| m.fold_accuracies.clone()).collect();
    let names: Vec<String> = models.iter().map(|m| m.model.to_string()).collect();
    let (friedman, pairwise, note) = if models.len() < 2 {
        (
            None,
            Vec::new(),
            Some("insufficient methods: Friedman test needs at least 2 models".to_string()),
        )
    } else {
        (
            Some(friedman(&scores)?),
            pairwise_wilcoxon(&names, &scores)?,
            None,
        )
    };
    Ok(ComparisonSection {
        folds: folds.len(),
        split_seed,
        split_hashes: folds.iter().map(split_hash).collect(),
        fold_seeds,
        models,
        friedman,
        pairwise,
        note,
    })
}
