use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scores::pearson_unchecked;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    /// Selected features by descending `|r|` with the label, then `"label"`.
    pub names: Vec<String>,
    /// Column indices of the selected features.
    pub features: Vec<usize>,
    /// `|r|` of each selected feature with the label.
    pub label_abs_r: Vec<f64>,
    /// Row-major `(k+1)×(k+1)` Pearson matrix.
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    /// Header row of names, then one row per variable led by its name.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (i, name) in self.names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend((0..self.size()).map(|j| self.get(i, j).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Pairwise Pearson matrix over the `top_k` features most correlated with the
/// label (ties by index) plus the label itself. Constant columns correlate 0
/// with everything else; the diagonal is exactly 1.
pub fn correlation_matrix(
    rows: &[f64],
    labels: &[usize],
    names: &[String],
    top_k: usize,
) -> Result<CorrelationMatrix> {
    let d = names.len();
    let n = labels.len();
    if n < 2 || rows.len() != n * d {
        return Err(Error::shape(
            "correlation_matrix",
            format!("{} values for {n} rows of width {d}", rows.len()),
        ));
    }
    if top_k > d {
        return Err(Error::invalid(format!(
            "top_k {top_k} exceeds {d} features"
        )));
    }
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| rows.chunks_exact(d).map(|r| r[j]).collect())
        .collect();
    let abs_r: Vec<f64> = cols
        .iter()
        .map(|c| pearson_unchecked(c, &y).unwrap_or(0.0).abs())
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| abs_r[b].total_cmp(&abs_r[a]).then(a.cmp(&b)));
    order.truncate(top_k);

    let mut vars: Vec<&[f64]> = order.iter().map(|&j| cols[j].as_slice()).collect();
    vars.push(&y);
    let k = vars.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in i + 1..k {
            let r = pearson_unchecked(vars[i], vars[j]).unwrap_or(0.0);
            values[i * k + j] = r;
            values[j * k + i] = r;
        }
    }
    let mut out_names: Vec<String> = order.iter().map(|&j| names[j].clone()).collect();
    out_names.push(crate::data::LABEL_COLUMN.to_string());
    Ok(CorrelationMatrix {
        names: out_names,
        label_abs_r: order.iter().map(|&j| abs_r[j]).collect(),
        features: order,
        values,
    })
}
