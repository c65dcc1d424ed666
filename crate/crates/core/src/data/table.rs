use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::NUM_CLASSES;

pub const LABEL_COLUMN: &str = "label";

/// Class names in label-id order: 0 = Neutral, 1 = Positive, 2 = Negative.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["NEUTRAL", "POSITIVE", "NEGATIVE"];

/// Sample-major matrix of EEG features with named columns and class labels.
///
/// Immutable once built; construct through [`FeatureTable::new`],
/// [`FeatureTable::load_csv`] or the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    values: Vec<f64>,
    n_rows: usize,
    feature_names: Vec<String>,
    labels: Vec<usize>,
}

impl FeatureTable {
    /// `values` is row-major, `labels.len()` rows by `feature_names.len()` columns.
    pub fn new(values: Vec<f64>, feature_names: Vec<String>, labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        let d = feature_names.len();
        if n == 0 || d == 0 {
            return Err(Error::invalid(
                "feature table needs at least one row and one column",
            ));
        }
        if values.len() != n * d {
            return Err(Error::invalid(format!(
                "value buffer has {} entries, expected {n}x{d}",
                values.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..{NUM_CLASSES}"
            )));
        }
        let mut seen = HashSet::with_capacity(d);
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate feature name {name:?}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                feature_names[pos % d]
            )));
        }
        Ok(Self {
            values,
            n_rows: n,
            feature_names,
            labels,
        })
    }

    /// Read a comma-separated file with a header row and a `label` column.
    ///
    /// Labels may be textual (`NEUTRAL`, `POSITIVE`, `NEGATIVE`, any case) or
    /// the integer ids `0`, `1`, `2`. Every other column must be numeric.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let headers = reader.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::Format {
                path: path.into(),
                message: "empty file".into(),
            });
        }
        let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
        let label_col = names
            .iter()
            .position(|h| h == LABEL_COLUMN)
            .ok_or_else(|| Error::Format {
                path: path.into(),
                message: format!("missing `{LABEL_COLUMN}` column"),
            })?;
        let feature_names: Vec<String> = names
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_col)
            .map(|(_, n)| n.clone())
            .collect();

        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record?;
            if record.len() != names.len() {
                return Err(Error::Ingest {
                    path: path.into(),
                    row: line,
                    column: "*".into(),
                    message: format!("expected {} fields, found {}", names.len(), record.len()),
                });
            }
            for (j, cell) in record.iter().enumerate() {
                let cell = cell.trim();
                if j == label_col {
                    let label = parse_label(cell).ok_or_else(|| Error::Ingest {
                        path: path.into(),
                        row: line,
                        column: LABEL_COLUMN.into(),
                        message: format!("unknown label {cell:?}"),
                    })?;
                    labels.push(label);
                    continue;
                }
                let value: f64 = cell.parse().map_err(|_| Error::Ingest {
                    path: path.into(),
                    row: line,
                    column: names[j].clone(),
                    message: format!("non-numeric cell {cell:?}"),
                })?;
                if !value.is_finite() {
                    return Err(Error::Ingest {
                        path: path.into(),
                        row: line,
                        column: names[j].clone(),
                        message: format!("non-finite value {cell:?}"),
                    });
                }
                values.push(value);
            }
        }
        if labels.is_empty() {
            return Err(Error::Format {
                path: path.into(),
                message: "no data rows".into(),
            });
        }
        if feature_names.is_empty() {
            return Err(Error::Format {
                path: path.into(),
                message: "no feature columns".into(),
            });
        }
        Self::new(values, feature_names, labels).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }

    /// Write the table back out; floats use the shortest round-tripping form.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(self.values.len() * 12);
        self.write_csv_to(&mut out)?;
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(LABEL_COLUMN);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows {
            record.clear();
            record.extend(self.row(i).iter().map(|v| format!("{v:?}")));
            record.push(CLASS_NAMES[self.labels[i]].to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row-major value buffer.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.values[i * self.n_features() + j])
            .collect()
    }

    /// Row-major copy of the selected rows.
    pub fn gather_rows(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.n_features());
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn gather_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// Sub-table keeping only the given feature columns, in the given order.
    pub fn select_features(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::invalid("feature selection leaves zero features"));
        }
        let d = self.n_features();
        let mut values = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            let row = &self.values[i * d..(i + 1) * d];
            values.extend(cols.iter().map(|&j| row[j]));
        }
        let names = cols
            .iter()
            .map(|&j| self.feature_names[j].clone())
            .collect();
        Self::new(values, names, self.labels.clone())
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn parse_label(cell: &str) -> Option<usize> {
    match cell.to_ascii_uppercase().as_str() {
        "NEUTRAL" | "0" => Some(0),
        "POSITIVE" | "1" => Some(1),
        "NEGATIVE" | "2" => Some(2),
        _ => None,
    }
}
