use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    AblationSection, ComparisonSection, ExperimentConfig, InterpretabilitySection, SingleRunSection,
};
use crate::data::{FeatureTable, SplitIndices, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::stats::ConfusionMatrix;
use crate::train::TrainTrace;

/// Version of the report and run-directory file layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub class_counts: Vec<usize>,
    pub fingerprint: String,
}

impl DatasetInfo {
    pub fn describe(table: &FeatureTable, source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            n_rows: table.n_rows(),
            n_features: table.n_features(),
            class_counts: table.class_counts().to_vec(),
            fingerprint: dataset_fingerprint(table),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// SHA-256 over feature names, values and labels.
pub fn dataset_fingerprint(table: &FeatureTable) -> String {
    let mut h = Sha256::new();
    for name in table.feature_names() {
        h.update(name.as_bytes());
        h.update([0u8]);
    }
    for v in table.values() {
        h.update(v.to_le_bytes());
    }
    for &l in table.labels() {
        h.update((l as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

/// SHA-256 over the train indices, a separator, then the test indices.
pub fn split_hash(split: &SplitIndices) -> String {
    let mut h = Sha256::new();
    for &i in &split.train {
        h.update((i as u64).to_le_bytes());
    }
    h.update(u64::MAX.to_le_bytes());
    for &i in &split.test {
        h.update((i as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single: Option<SingleRunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretability: Option<InterpretabilitySection>,
}

fn csv_bytes(f: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    }
    Ok(buf)
}

fn trace_bytes(t: &TrainTrace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    t.write_csv_to(&mut buf)?;
    Ok(buf)
}

fn confusion_rows(
    w: &mut csv::Writer<&mut Vec<u8>>,
    model: &str,
    c: &ConfusionMatrix,
) -> Result<()> {
    for (name, row) in CLASS_NAMES.iter().zip(&c.counts) {
        let mut rec = vec![model.to_string(), name.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    Ok(())
}

impl RunReport {
    pub fn new(command: impl Into<String>, config: ExperimentConfig, dataset: DatasetInfo) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config,
            dataset,
            single: None,
            comparison: None,
            ablation: None,
            interpretability: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                path: path.into(),
                message: format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    report.schema_version
                ),
            });
        }
        Ok(report)
    }

    /// Every file of the run directory as `(file name, contents)`, in a fixed
    /// order.
    pub fn artifacts(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = vec![("report.json".to_string(), self.to_json()?.into_bytes())];
        let mut metrics = serde_json::Map::new();
        let mut confusions: Vec<(String, &ConfusionMatrix)> = Vec::new();
        let mut cis = Vec::new();
        if let Some(s) = &self.single {
            metrics.insert(
                s.model.to_string(),
                serde_json::json!({
                    "model": s.model.display_name(),
                    "accuracy": s.metrics.accuracy,
                    "metrics": s.metrics,
                    "train_accuracy": s.train_acc,
                    "overfitting_gap": s.overfitting_gap,
                }),
            );
            confusions.push((s.model.to_string(), &s.confusion));
            cis.push((s.model.to_string(), s.metrics.accuracy, s.ci));
            if let Some(t) = &s.trace {
                files.push((format!("trace_{}.csv", s.model), trace_bytes(t)?));
            }
        }
        if let Some(c) = &self.comparison {
            for m in &c.models {
                metrics.insert(
                    m.model.to_string(),
                    serde_json::json!({
                        "model": m.name,
                        "accuracy": m.metrics.accuracy,
                        "metrics": m.metrics,
                        "fold_accuracies": m.fold_accuracies,
                        "mean_accuracy": m.mean_accuracy,
                        "std_accuracy": m.std_accuracy,
                        "train_accuracy": m.mean_train_accuracy,
                        "overfitting_gap": m.overfitting_gap,
                    }),
                );
                confusions.push((m.model.to_string(), &m.confusion));
                cis.push((m.model.to_string(), m.metrics.accuracy, m.ci));
                for (f, t) in m.traces.iter().enumerate() {
                    files.push((
                        format!("trace_{}_fold{}.csv", m.model, f + 1),
                        trace_bytes(t)?,
                    ));
                }
            }
            let stats = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "friedman": c.friedman,
                "pairwise_wilcoxon": c.pairwise,
                "correction": "bonferroni",
                "note": c.note,
            });
            files.push((
                "stats.json".into(),
                format!("{}\n", serde_json::to_string_pretty(&stats)?).into_bytes(),
            ));
        }
        if !metrics.is_empty() {
            let doc = serde_json::json!({ "schema_version": SCHEMA_VERSION, "models": metrics });
            files.push((
                "metrics.json".into(),
                format!("{}\n", serde_json::to_string_pretty(&doc)?).into_bytes(),
            ));
            files.push((
                "confusion.csv".into(),
                csv_bytes(|w| {
                    let mut header = vec!["model", "actual"];
                    header.extend(CLASS_NAMES);
                    w.write_record(&header)?;
                    confusions
                        .iter()
                        .try_for_each(|(m, c)| confusion_rows(w, m, c))
                })?,
            ));
            files.push((
                "ci.csv".into(),
                csv_bytes(|w| {
                    w.write_record(["model", "accuracy", "lower", "upper", "level"])?;
                    for (m, acc, ci) in &cis {
                        w.serialize((m, acc, ci.lower, ci.upper, ci.level))?;
                    }
                    Ok(())
                })?,
            ));
        }
        if let Some(a) = &self.ablation {
            files.push((
                "ablation.csv".into(),
                csv_bytes(|w| {
                    w.write_record([
                        "removed_category",
                        "removed_features",
                        "result_acc",
                        "acc_drop",
                        "full_acc",
                        "runs",
                    ])?;
                    for r in &a.rows {
                        w.serialize((
                            r.removed.as_str(),
                            r.removed_features,
                            r.accuracy,
                            r.drop,
                            a.full_accuracy,
                            a.runs,
                        ))?;
                    }
                    Ok(())
                })?,
            ));
        }
        if let Some(i) = &self.interpretability {
            let mut buf = Vec::new();
            i.importance.write_csv_to(&mut buf)?;
            files.push(("importance.csv".into(), buf));
            let mut buf = Vec::new();
            i.correlation.write_csv_to(&mut buf)?;
            files.push(("correlation.csv".into(), buf));
            let names = &i.importance.feature_names;
            files.push((
                "shapley.csv".into(),
                csv_bytes(|w| {
                    w.write_record(["feature", "mean_abs_phi", "rank"])?;
                    for (rank, &j) in i.shapley.ranking.iter().enumerate() {
                        w.serialize((&names[j], i.shapley.mean_abs_phi[j], rank + 1))?;
                    }
                    Ok(())
                })?,
            ));
        }
        Ok(files)
    }

    /// Writes every artifact into `dir`, each via temp-file-then-rename. All
    /// contents are rendered before the first write.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>> {
        let files = self.artifacts()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in &files {
            write_atomic(&dir.join(name), bytes)?;
        }
        Ok(files.into_iter().map(|(n, _)| n).collect())
    }

    /// Plain-text tables of every section present.
    pub fn render_text(&self, top_k: usize) -> String {
        let mut out = String::new();
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let _ = writeln!(
            out,
            "{} on {} ({} rows x {} features), seed {}",
            self.command,
            self.dataset.source,
            self.dataset.n_rows,
            self.dataset.n_features,
            self.config.seed
        );
        if let Some(s) = &self.single {
            let m = &s.metrics;
            let _ = writeln!(out, "\nModel: {}", s.model.display_name());
            let _ = writeln!(out, "{:<10} {:>8}", "Metric", "Value");
            for (k, v) in [
                ("Accuracy", m.accuracy),
                ("Precision", m.macro_precision),
                ("Recall", m.macro_recall),
                ("F1-Score", m.macro_f1),
            ] {
                let _ = writeln!(out, "{k:<10} {:>8}", pct(v));
            }
            let _ = writeln!(
                out,
                "Training accuracy {}  Overfitting gap {}",
                pct(s.train_acc),
                pct(s.overfitting_gap)
            );
            let _ = writeln!(
                out,
                "{:.0}% CI [{}, {}]",
                100.0 * s.ci.level,
                pct(s.ci.lower),
                pct(s.ci.upper)
            );
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>8} {:>8} {:>8}",
                "Class", "Precision", "Recall", "F1", "Support"
            );
            for (name, c) in CLASS_NAMES.iter().zip(&m.per_class) {
                let _ = writeln!(
                    out,
                    "{name:<10} {:>9} {:>8} {:>8} {:>8}",
                    pct(c.precision),
                    pct(c.recall),
                    pct(c.f1),
                    c.support
                );
            }
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(
                out,
                "\nModel comparison ({}-fold cross-validation)",
                c.folds
            );
            let _ = writeln!(
                out,
                "{:<33} {:>7} {:>7} {:>7} {:>7}",
                "Model", "Acc", "Prec", "Rec", "F1"
            );
            for m in &c.models {
                let _ = writeln!(
                    out,
                    "{:<33} {:>7} {:>7} {:>7} {:>7}",
                    m.name,
                    pct(m.metrics.accuracy),
                    pct(m.metrics.macro_precision),
                    pct(m.metrics.macro_recall),
                    pct(m.metrics.macro_f1)
                );
            }
            match &c.friedman {
                Some(f) => {
                    let _ = writeln!(
                        out,
                        "Friedman chi2 = {:.4}, p = {:.4}",
                        f.statistic, f.p_value
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{}",
                        c.note.as_deref().unwrap_or("Friedman test skipped")
                    );
                }
            }
            if !c.pairwise.is_empty() {
                let _ = writeln!(
                    out,
                    "{:<10} {:<10} {:>8} {:>9} {:>10}",
                    "A", "B", "W", "p", "p (Bonf.)"
                );
                for p in &c.pairwise {
                    let _ = writeln!(
                        out,
                        "{:<10} {:<10} {:>8.1} {:>9.4} {:>10.4}",
                        p.a, p.b, p.statistic, p.p_value, p.p_adjusted
                    );
                }
            }
            let _ = writeln!(out, "{:<33} {:>8} {:>18}", "Model", "Accuracy", "CI");
            for m in &c.models {
                let _ = writeln!(
                    out,
                    "{:<33} {:>8} {:>18}",
                    m.name,
                    pct(m.metrics.accuracy),
                    format!("[{}, {}]", pct(m.ci.lower), pct(m.ci.upper))
                );
            }
        }
        if let Some(a) = &self.ablation {
            let _ = writeln!(
                out,
                "\nFeature category ablation ({}, {} runs, full accuracy {})",
                a.model.display_name(),
                a.runs,
                pct(a.full_accuracy)
            );
            let _ = writeln!(
                out,
                "{:<20} {:>10} {:>12}",
                "Removed Category", "Acc. Drop", "Result Acc."
            );
            for r in &a.rows {
                let _ = writeln!(
                    out,
                    "{:<20} {:>10} {:>12}",
                    r.removed.as_str(),
                    pct(r.drop),
                    pct(r.accuracy)
                );
            }
        }
        if let Some(i) = &self.interpretability {
            let _ = writeln!(
                out,
                "\nTop {} features by consensus importance",
                top_k.min(i.importance.ranking.len())
            );
            let _ = writeln!(out, "{:>4} {:<32} {:>9}", "Rank", "Feature", "Score");
            for (r, (name, score)) in i.importance.top(top_k).into_iter().enumerate() {
                let _ = writeln!(out, "{:>4} {:<32} {:>9.4}", r + 1, name, score);
            }
            let worst = i
                .shapley
                .efficiency_residuals
                .iter()
                .fold(0.0f64, |a, r| a.max(r.abs()));
            let _ = writeln!(
                out,
                "Shapley ({}, {} samples, {} permutations): max |efficiency residual| {:.2e}",
                i.shapley.model.display_name(),
                i.shapley.sample_indices.len(),
                i.shapley.n_permutations,
                worst
            );
            let _ = writeln!(out, "Correlation matrix: {0}x{0}", i.correlation.size());
        }
        out
    }
}
