use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of nonzero differences for which the Wilcoxon p-value is
/// computed from the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Number of blocks (Friedman) or nonzero pairs (Wilcoxon).
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean_ranks: Vec<f64>,
}

/// Ranks `1..=n` of `values` ascending, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test over `scores[method][fold]`. Rank 1 is the highest score in
/// a fold; `mean_ranks` follows method order.
pub fn friedman(scores: &[Vec<f64>]) -> Result<StatTestResult> {
    let m = scores.len();
    if m < 2 {
        return Err(Error::invalid("Friedman test needs at least 2 methods"));
    }
    let k = scores[0].len();
    if k < 2 || scores.iter().any(|s| s.len() != k) {
        return Err(Error::invalid(
            "Friedman test needs at least 2 folds and equal fold counts",
        ));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Friedman scores must be finite"));
    }
    let mut mean_ranks = vec![0.0; m];
    for f in 0..k {
        let neg: Vec<f64> = scores.iter().map(|s| -s[f]).collect();
        for (r, rank) in mean_ranks.iter_mut().zip(average_ranks(&neg)) {
            *r += rank / k as f64;
        }
    }
    let (mf, kf) = (m as f64, k as f64);
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let statistic =
        (12.0 * kf / (mf * (mf + 1.0)) * (sum_sq - mf * (mf + 1.0).powi(2) / 4.0)).max(0.0);
    let chi = ChiSquared::new(mf - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        chi.sf(statistic).clamp(0.0, 1.0)
    };
    Ok(StatTestResult {
        method: "friedman".into(),
        statistic,
        p_value,
        n: k,
        mean_ranks,
    })
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes share average ranks. The
/// statistic is `min(W+, W−)`. Up to [`WILCOXON_EXACT_MAX_N`] nonzero pairs the
/// p-value comes from the exact permutation distribution of the observed
/// ranks; beyond that a tie-corrected normal approximation with continuity
/// correction is used. All-zero differences give `W = 0`, `p = 1`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "wilcoxon",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|&v| v != 0.0)
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Wilcoxon differences must be finite"));
    }
    let n = d.len();
    let method = |exact: bool| {
        if exact {
            "wilcoxon_exact"
        } else {
            "wilcoxon_normal"
        }
        .to_string()
    };
    if n == 0 {
        return Ok(StatTestResult {
            method: method(true),
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            mean_ranks: Vec::new(),
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, &v)| v > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);

    let p_value = if n <= WILCOXON_EXACT_MAX_N {
        exact_p(&ranks, w)
    } else {
        let nf = n as f64;
        let ties: f64 = tie_groups(&abs)
            .iter()
            .map(|&t| (t * t * t - t) as f64)
            .sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let mean = total / 2.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = (w - mean + 0.5).min(0.0) / var.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            (2.0 * normal.cdf(z)).min(1.0)
        }
    };
    Ok(StatTestResult {
        method: method(n <= WILCOXON_EXACT_MAX_N),
        statistic: w,
        p_value,
        n,
        mean_ranks: Vec::new(),
    })
}

fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().take_while(|&&x| x == v[i]).count();
        groups.push(j);
        i += j;
    }
    groups
}

/// `P(min(W+, W−) <= w)` under random signs, by counting sign patterns over
/// doubled (hence integer) ranks.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w2 = (2.0 * w).round() as usize;
    let hits: u64 = (0..=total)
        .filter(|&s| s.min(total - s) <= w2)
        .map(|s| counts[s])
        .sum();
    (hits as f64 / (1u64 << ranks.len()) as f64).min(1.0)
}

/// Multiplies each p-value by `m`, capped at 1.
pub fn bonferroni(p_values: &[f64], m: usize) -> Vec<f64> {
    p_values.iter().map(|p| (p * m as f64).min(1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub statistic: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub method: String,
}

/// Wilcoxon test for every pair of methods, Bonferroni-adjusted over the
/// number of pairs.
pub fn pairwise_wilcoxon(names: &[String], scores: &[Vec<f64>]) -> Result<Vec<PairwiseTest>> {
    if names.len() != scores.len() {
        return Err(Error::invalid("one score vector per method name required"));
    }
    let mut out = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let r = wilcoxon_signed_rank(&scores[i], &scores[j])?;
            out.push(PairwiseTest {
                a: names[i].clone(),
                b: names[j].clone(),
                statistic: r.statistic,
                p_value: r.p_value,
                p_adjusted: 0.0,
                method: r.method,
            });
        }
    }
    let raw: Vec<f64> = out.iter().map(|t| t.p_value).collect();
    for (t, p) in out.iter_mut().zip(bonferroni(&raw, raw.len())) {
        t.p_adjusted = p;
    }
    Ok(out)
}
