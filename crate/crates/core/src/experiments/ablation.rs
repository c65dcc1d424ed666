use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::split_hash;
use super::{fit_on_split, ExperimentConfig, ModelKind};
use crate::data::{Category, CategoryMap, FeatureTable};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub removed: Category,
    pub removed_features: usize,
    pub remaining_features: usize,
    /// Mean test accuracy over runs without the category.
    pub accuracy: f64,
    /// Full-set accuracy minus `accuracy`.
    pub drop: f64,
    pub run_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSection {
    pub model: ModelKind,
    pub runs: usize,
    pub split_hash: String,
    pub run_seeds: Vec<u64>,
    pub full_accuracy: f64,
    pub full_run_accuracies: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

pub fn accuracy_drop(full: f64, result: f64) -> f64 {
    full - result
}

/// Retrains the ablation model from scratch without each feature category in
/// turn, on the shared hold-out split, averaging test accuracy over runs.
pub fn run_ablation(
    table: &FeatureTable,
    map: &CategoryMap,
    cfg: &ExperimentConfig,
) -> Result<AblationSection> {
    cfg.validate()?;
    if map.len() != table.n_features() {
        return Err(Error::invalid(format!(
            "category map covers {} features, table has {}",
            map.len(),
            table.n_features()
        )));
    }
    let present = map.present();
    if present.len() < 2 {
        return Err(Error::invalid(
            "ablation needs at least 2 feature categories",
        ));
    }
    let split = cfg.holdout_split(table)?;
    let run_seeds: Vec<u64> = (0..cfg.ablation_runs)
        .map(|r| seed::derive(cfg.seed, "ablation_run", r as u64))
        .collect();
    let mut variants: Vec<(Option<Category>, FeatureTable)> = vec![(None, table.clone())];
    for &c in &present {
        variants.push((Some(c), table.select_features(&map.indices_without(c))?));
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..run_seeds.len()).map(move |r| (v, r)))
        .collect();
    let accs = jobs
        .par_iter()
        .map(|&(v, r)| {
            let label = variants[v].0.map_or("full", |c| c.as_str());
            log::info!("ablation {label}: run {}/{}", r + 1, run_seeds.len());
            Ok(fit_on_split(
                cfg.ablation_model,
                &variants[v].1,
                &split,
                cfg,
                run_seeds[r],
            )?
            .test_acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let runs = run_seeds.len();
    let mean = |v: usize| accs[v * runs..(v + 1) * runs].iter().sum::<f64>() / runs as f64;
    let full_accuracy = mean(0);
    let rows = present
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let accuracy = mean(i + 1);
            AblationRow {
                removed: c,
                removed_features: map.indices_of(c).len(),
                remaining_features: variants[i + 1].1.n_features(),
                accuracy,
                drop: accuracy_drop(full_accuracy, accuracy),
                run_accuracies: accs[(i + 1) * runs..(i + 2) * runs].to_vec(),
            }
        })
        .collect();
    Ok(AblationSection {
        model: cfg.ablation_model,
        runs,
        split_hash: split_hash(&split),
        run_seeds,
        full_accuracy,
        full_run_accuracies: accs[..runs].to_vec(),
        rows,
    })
}
