use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix, rows = actual class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::shape(
                "confusion",
                format!(
                    "{} labels vs {} predictions",
                    labels.len(),
                    predictions.len()
                ),
            ));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= classes || p >= classes {
                return Err(Error::invalid(format!(
                    "class id out of range: actual {y}, predicted {p}"
                )));
            }
            counts[y][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    /// Per-class supports.
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.classes())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// `actual,<class names...>` header followed by one row per actual class.
    pub fn write_csv_to<W: Write>(&self, writer: W, class_names: &[&str]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["actual"];
        header.extend(class_names.iter().copied());
        w.write_record(&header)?;
        for (name, row) in class_names.iter().zip(&self.counts) {
            let mut rec = vec![name.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Set when some precision, recall or F1 had a zero denominator and was
    /// reported as 0.
    pub zero_division: bool,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let k = cm.classes();
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let mut zero_division = false;
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let precision = ratio(tp, cols[c] as f64, &mut zero_division);
            let recall = ratio(tp, rows[c] as f64, &mut zero_division);
            let f1 = ratio(
                2.0 * precision * recall,
                precision + recall,
                &mut zero_division,
            );
            ClassMetrics {
                precision,
                recall,
                f1,
                support: rows[c],
            }
        })
        .collect();
    let n = total as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64)
            .sum::<f64>()
            / n
    };
    Ok(Metrics {
        accuracy: cm.trace() as f64 / n,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        per_class,
        zero_division,
    })
}

/// Training minus validation accuracy; negative values are kept.
pub fn overfitting_gap(train_acc: f64, val_acc: f64) -> f64 {
    train_acc - val_acc
}
