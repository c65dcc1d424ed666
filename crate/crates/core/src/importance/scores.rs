use crate::error::{Error, Result};

fn check_lengths(x: &[f64], labels: &[usize], op: &'static str) -> Result<()> {
    if x.len() != labels.len() {
        return Err(Error::shape(
            op,
            format!("{} values for {} labels", x.len(), labels.len()),
        ));
    }
    if x.is_empty() {
        return Err(Error::invalid(format!("{op}: empty input")));
    }
    Ok(())
}

/// Equal-frequency bin index per value. A value lands in the bin of the first
/// sorted position it occupies, so tied values always share a bin.
pub fn equal_frequency_bins(x: &[f64], n_bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut bins = vec![0; n];
    let mut first = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && x[i] != x[order[pos - 1]] {
            first = pos;
        }
        bins[i] = first * n_bins / n;
    }
    bins
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information in nats between the equal-frequency binned feature and
/// the labels: `H(X) − H(X | Y)`. A constant feature scores 0.
pub fn mutual_information(
    x: &[f64],
    labels: &[usize],
    classes: usize,
    n_bins: usize,
) -> Result<f64> {
    check_lengths(x, labels, "mutual_information")?;
    if n_bins < 2 {
        return Err(Error::invalid("mutual information needs at least 2 bins"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let bins = equal_frequency_bins(x, n_bins);
    let n = x.len() as f64;
    let mut joint = vec![0usize; n_bins * classes];
    let mut bx = vec![0usize; n_bins];
    let mut by = vec![0usize; classes];
    for (&b, &y) in bins.iter().zip(labels) {
        joint[b * classes + y] += 1;
        bx[b] += 1;
        by[y] += 1;
    }
    let h_x = entropy(bx.iter().copied(), n);
    let h_x_given_y: f64 = (0..classes)
        .filter(|&y| by[y] > 0)
        .map(|y| {
            let ny = by[y] as f64;
            ny / n * entropy((0..n_bins).map(|b| joint[b * classes + y]), ny)
        })
        .sum();
    Ok((h_x - h_x_given_y).max(0.0))
}

/// One-way ANOVA F statistic across the label groups. Zero within-group
/// variance gives `+∞` when the group means differ and 0 when they do not.
pub fn anova_f(x: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    check_lengths(x, labels, "anova_f")?;
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (&v, &y) in x.iter().zip(labels) {
        if y >= classes {
            return Err(Error::invalid(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        sums[y] += v;
        counts[y] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::invalid(format!(
            "ANOVA needs at least 2 samples per class, class {k} has {}",
            counts[k]
        )));
    }
    let n = x.len() as f64;
    let grand = x.iter().sum::<f64>() / n;
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let between: f64 = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| c as f64 * (m - grand).powi(2))
        .sum();
    let within: f64 = x
        .iter()
        .zip(labels)
        .map(|(v, &y)| (v - means[y]).powi(2))
        .sum();
    let df_between = (classes - 1) as f64;
    let df_within = n - classes as f64;
    if within == 0.0 {
        return Ok(if between > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok((between / df_between) / (within / df_within))
}

/// Sample Pearson correlation. Returns 0 (with a warning) when either input is
/// constant.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::shape(
            "pearson_r",
            format!("lengths {} and {}", x.len(), y.len()),
        ));
    }
    let r = pearson_unchecked(x, y);
    if r.is_none() {
        log::warn!("pearson correlation of a constant vector, reporting 0");
    }
    Ok(r.unwrap_or(0.0))
}

pub(crate) fn pearson_unchecked(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation with the integer label encoding.
pub fn label_correlation(x: &[f64], labels: &[usize]) -> Result<f64> {
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    pearson_r(x, &y)
}
