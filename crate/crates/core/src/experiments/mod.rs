//! Study orchestration: single-model training runs, the five-model
//! cross-validated comparison, category ablation and the interpretability
//! analyses, all collected into a self-describing [`RunReport`].

mod ablation;
mod comparison;
mod interpret;
mod report;
mod single;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, FeatureTable, SplitIndices};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, ForestConfig};
use crate::importance::{ImportanceConfig, ShapleyConfig};
use crate::nn::{argmax, fast_seq_shape, HybridSpec, MlpSpec, ModelSpec};
use crate::train::{train, TrainOutcome, TrainSpec, TrainTrace};
use crate::{seed, NUM_CLASSES};

pub use ablation::{accuracy_drop, run_ablation, AblationRow, AblationSection};
pub use comparison::{run_comparison, ComparisonSection, ModelSummary};
pub use interpret::{run_interpretability, InterpretabilitySection, ShapleySummary};
pub use report::{
    dataset_fingerprint, split_hash, write_atomic, DatasetInfo, RunReport, SCHEMA_VERSION,
};
pub use single::{run_single, SingleRunSection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Et,
    Mlp,
    Standard,
    Enhanced,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Rf,
        ModelKind::Et,
        ModelKind::Mlp,
        ModelKind::Standard,
        ModelKind::Enhanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Et => "et",
            ModelKind::Mlp => "mlp",
            ModelKind::Standard => "standard",
            ModelKind::Enhanced => "enhanced",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Rf => "Random Forest",
            ModelKind::Et => "Extra Trees",
            ModelKind::Mlp => "MLP",
            ModelKind::Standard => "Transformer-CNN-BiLSTM",
            ModelKind::Enhanced => "Enhanced Transformer-CNN-BiLSTM",
        }
    }

    pub fn is_forest(self) -> bool {
        matches!(self, ModelKind::Rf | ModelKind::Et)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model {s:?}, expected one of rf, et, mlp, standard, enhanced"
                ))
            })
    }
}

/// Every knob of a study. Serialized verbatim into each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Use the desk-scale hybrid architecture and `fast_epochs`.
    pub fast: bool,
    pub fast_epochs: usize,
    pub test_fraction: f64,
    pub folds: usize,
    pub roster: Vec<ModelKind>,
    pub n_trees: usize,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub ablation_runs: usize,
    pub ablation_model: ModelKind,
    pub shap_model: ModelKind,
    pub shap_samples: usize,
    pub shap_permutations: usize,
    pub mi_bins: usize,
    pub correlation_top_k: usize,
    pub train: TrainSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fast: false,
            fast_epochs: 50,
            test_fraction: 0.2,
            folds: 5,
            roster: ModelKind::ALL.to_vec(),
            n_trees: 100,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            ablation_runs: 3,
            ablation_model: ModelKind::Enhanced,
            shap_model: ModelKind::Rf,
            shap_samples: 500,
            shap_permutations: 50,
            mi_bins: 10,
            correlation_top_k: 30,
            train: TrainSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if self.folds < 2 {
            return bad("folds must be >= 2");
        }
        if self.roster.is_empty() {
            return bad("roster must name at least one model");
        }
        for (key, v) in [
            ("n_trees", self.n_trees),
            ("bootstrap_resamples", self.bootstrap_resamples),
            ("ablation_runs", self.ablation_runs),
            ("shap_permutations", self.shap_permutations),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{key} must be positive")));
            }
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad("ci_level must lie in (0, 1)");
        }
        if self.fast && self.fast_epochs == 0 {
            return bad("fast_epochs must be positive");
        }
        if self.mi_bins < 2 {
            return bad("mi_bins must be >= 2");
        }
        self.train.validate().map_err(|e| match e {
            Error::InvalidArgument(m) => Error::invalid(format!("train.{m}")),
            other => other,
        })
    }

    /// Architecture for a neural model kind at `input_dim`, or `None` for
    /// forests.
    pub fn model_spec(&self, kind: ModelKind, input_dim: usize) -> Option<ModelSpec> {
        let hybrid = || {
            if self.fast {
                return HybridSpec::fast(input_dim);
            }
            let mut h = HybridSpec::enhanced();
            if h.input_dim != input_dim {
                h.input_dim = input_dim;
                h.seq_shape = fast_seq_shape(input_dim);
            }
            h
        };
        match kind {
            ModelKind::Rf | ModelKind::Et => None,
            ModelKind::Mlp => Some(ModelSpec::Mlp(MlpSpec::baseline(input_dim))),
            ModelKind::Standard => Some(ModelSpec::Hybrid(HybridSpec::standard_from(&hybrid()))),
            ModelKind::Enhanced => Some(ModelSpec::Hybrid(hybrid())),
        }
    }

    pub fn forest_config(&self, kind: ModelKind, seed: u64) -> Option<ForestConfig> {
        let base = match kind {
            ModelKind::Rf => ForestConfig::random_forest(seed),
            ModelKind::Et => ForestConfig::extra_trees(seed),
            _ => return None,
        };
        Some(ForestConfig {
            n_trees: self.n_trees,
            ..base
        })
    }

    pub fn train_spec(&self, seed: u64) -> TrainSpec {
        let mut t = self.train.clone();
        t.seed = seed;
        if self.fast {
            t.epochs = self.fast_epochs;
        }
        t
    }

    pub fn importance_config(&self) -> ImportanceConfig {
        ImportanceConfig {
            mi_bins: self.mi_bins,
            n_trees: self.n_trees,
            seed: seed::derive(self.seed, "importance", 0),
        }
    }

    pub fn shapley_config(&self) -> ShapleyConfig {
        ShapleyConfig {
            n_permutations: self.shap_permutations,
            antithetic: true,
            seed: seed::derive(self.seed, "shapley", 0),
        }
    }

    /// The stratified hold-out split shared by `train`, ablation and
    /// interpretability.
    pub fn holdout_split(&self, table: &FeatureTable) -> Result<SplitIndices> {
        stratified_split(
            table.labels(),
            self.test_fraction,
            seed::derive(self.seed, "holdout", 0),
        )
    }
}

/// A trained classifier of any kind.
#[derive(Debug, Clone)]
pub enum Fitted {
    Forest(Forest),
    Net(Box<TrainOutcome>),
}

impl Fitted {
    /// Class probabilities for raw (unnormalized) row-major feature rows.
    pub fn predict_proba(&self, rows: &[f64]) -> Result<Vec<f64>> {
        match self {
            Fitted::Forest(f) => f.predict_proba(rows),
            Fitted::Net(o) => o.model.predict_proba(&o.normalizer.apply(rows)),
        }
    }

    pub fn predict(&self, rows: &[f64]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(rows)?
            .chunks(NUM_CLASSES)
            .map(argmax)
            .collect())
    }

    pub fn trace(&self) -> Option<&TrainTrace> {
        match self {
            Fitted::Forest(_) => None,
            Fitted::Net(o) => Some(&o.trace),
        }
    }
}

/// Outcome of fitting one model on one split and scoring it on the held-out
/// rows.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub fitted: Fitted,
    pub predictions: Vec<usize>,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Fits `kind` on `split.train` and evaluates on `split.test`. Neural models
/// early-stop on the held-out rows.
pub fn fit_on_split(
    kind: ModelKind,
    table: &FeatureTable,
    split: &SplitIndices,
    cfg: &ExperimentConfig,
    seed_: u64,
) -> Result<SplitResult> {
    let d = table.n_features();
    let fitted = if let Some(fc) = cfg.forest_config(kind, seed_) {
        let rows = table.gather_rows(&split.train);
        let labels = table.gather_labels(&split.train);
        Fitted::Forest(fit_forest(&rows, &labels, NUM_CLASSES, &fc)?)
    } else {
        let spec = cfg.model_spec(kind, d).expect("neural model kind");
        let model = crate::nn::Model::new(spec, seed::derive(seed_, "init", 0))?;
        let outcome = train(
            model,
            table,
            &split.train,
            &split.test,
            &cfg.train_spec(seed_),
        )?;
        Fitted::Net(Box::new(outcome))
    };
    let accuracy = |idx: &[usize]| -> Result<(Vec<usize>, f64)> {
        let pred = fitted.predict(&table.gather_rows(idx))?;
        let hits = pred
            .iter()
            .zip(idx)
            .filter(|(p, &i)| **p == table.labels()[i])
            .count();
        Ok((pred, hits as f64 / idx.len().max(1) as f64))
    };
    let (_, train_acc) = accuracy(&split.train)?;
    let (predictions, test_acc) = accuracy(&split.test)?;
    Ok(SplitResult {
        fitted,
        predictions,
        train_acc,
        test_acc,
    })
}
