use serde::{Deserialize, Serialize};

use super::report::split_hash;
use super::{fit_on_split, ExperimentConfig, Fitted, ModelKind};
use crate::data::FeatureTable;
use crate::error::Result;
use crate::forest::ForestConfig;
use crate::nn::ModelSpec;
use crate::stats::{
    bootstrap_ci, metrics, overfitting_gap, ConfidenceInterval, ConfusionMatrix, Metrics,
};
use crate::train::TrainTrace;
use crate::{seed, NUM_CLASSES};

/// One model trained on the hold-out split and scored on its test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleRunSection {
    pub model: ModelKind,
    pub seed: u64,
    pub split_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forest: Option<ForestConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_parameters: Option<usize>,
    pub train_acc: f64,
    pub test_acc: f64,
    pub overfitting_gap: f64,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub ci: ConfidenceInterval,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TrainTrace>,
}

pub fn run_single(
    table: &FeatureTable,
    kind: ModelKind,
    cfg: &ExperimentConfig,
) -> Result<(SingleRunSection, Fitted)> {
    cfg.validate()?;
    let split = cfg.holdout_split(table)?;
    let model_seed = seed::derive(cfg.seed, "model", 0);
    let r = fit_on_split(kind, table, &split, cfg, model_seed)?;
    let labels = table.gather_labels(&split.test);
    let confusion = ConfusionMatrix::from_predictions(&labels, &r.predictions, NUM_CLASSES)?;
    let ci = bootstrap_ci(
        &r.predictions,
        &labels,
        cfg.bootstrap_resamples,
        cfg.ci_level,
        seed::derive(cfg.seed, "ci", 0),
    )?;
    let (spec, n_parameters) = match &r.fitted {
        Fitted::Net(o) => (Some(o.model.spec.clone()), Some(o.model.num_parameters())),
        Fitted::Forest(_) => (None, None),
    };
    let section = SingleRunSection {
        model: kind,
        seed: model_seed,
        split_hash: split_hash(&split),
        spec,
        forest: cfg.forest_config(kind, model_seed),
        n_parameters,
        train_acc: r.train_acc,
        test_acc: r.test_acc,
        overfitting_gap: overfitting_gap(r.train_acc, r.test_acc),
        metrics: metrics(&confusion)?,
        confusion,
        ci,
        trace: r.fitted.trace().cloned(),
    };
    Ok((section, r.fitted))
}
