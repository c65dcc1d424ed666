use serde::{Deserialize, Serialize};

use super::report::split_hash;
use super::{ExperimentConfig, Fitted, ModelKind};
use crate::data::{FeatureTable, SplitIndices};
use crate::error::Result;
use crate::importance::{
    background_mean, compute_importance, correlation_matrix, mean_abs_phi, shapley_batch,
    CorrelationMatrix, ImportanceTable,
};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleySummary {
    pub model: ModelKind,
    pub n_permutations: usize,
    /// Training-set feature means used for absent features.
    pub background: Vec<f64>,
    pub sample_indices: Vec<usize>,
    /// Explained class per sample (its predicted class).
    pub target_classes: Vec<usize>,
    pub mean_abs_phi: Vec<f64>,
    /// Feature indices by descending mean `|phi|`, ties by index.
    pub ranking: Vec<usize>,
    pub efficiency_residuals: Vec<f64>,
    pub total_std_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilitySection {
    pub split_hash: String,
    pub importance: ImportanceTable,
    pub shapley: ShapleySummary,
    pub correlation: CorrelationMatrix,
}

/// Consensus importance on the training rows, Shapley attribution of
/// `fitted` for the first `shap_samples` test rows, and the label correlation
/// matrix of the top features over the whole table.
pub fn run_interpretability(
    table: &FeatureTable,
    split: &SplitIndices,
    fitted: &Fitted,
    model: ModelKind,
    cfg: &ExperimentConfig,
) -> Result<InterpretabilitySection> {
    cfg.validate()?;
    let d = table.n_features();
    let importance = compute_importance(table, &split.train, &cfg.importance_config())?;

    let background = background_mean(&table.gather_rows(&split.train), d)?;
    let sample_indices: Vec<usize> = split.test.iter().copied().take(cfg.shap_samples).collect();
    let rows = table.gather_rows(&sample_indices);
    let predict = |r: &[f64]| fitted.predict_proba(r);
    let reports = shapley_batch(
        &predict,
        NUM_CLASSES,
        &rows,
        &background,
        None,
        &cfg.shapley_config(),
    )?;
    let mean_abs = mean_abs_phi(&reports);
    let mut ranking: Vec<usize> = (0..mean_abs.len()).collect();
    ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let shapley = ShapleySummary {
        model,
        n_permutations: reports.first().map_or(0, |r| r.n_permutations),
        background,
        target_classes: reports.iter().map(|r| r.target_class).collect(),
        efficiency_residuals: reports.iter().map(|r| r.efficiency_residual).collect(),
        total_std_errors: reports.iter().map(|r| r.total_std_error()).collect(),
        sample_indices,
        mean_abs_phi: mean_abs,
        ranking,
    };

    let k = cfg.correlation_top_k.min(d);
    let correlation = correlation_matrix(table.values(), table.labels(), table.feature_names(), k)?;
    Ok(InterpretabilitySection {
        split_hash: split_hash(split),
        importance,
        shapley,
        correlation,
    })
}
