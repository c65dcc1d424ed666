use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::NUM_CLASSES;

/// Disjoint train/test index sets over `0..N`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn indices_by_class(labels: &[usize]) -> [Vec<usize>; NUM_CLASSES] {
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Largest-remainder apportionment of `total` items proportional to `sizes`.
/// Remainder ties go to the lower class id.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * total as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut short = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            short -= 1;
        }
    }
    alloc
}

/// Stratified hold-out split: the overall test size is `round(N * test_fraction)`,
/// shared out over the classes by largest remainder.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class = indices_by_class(labels);
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    for (c, &s) in sizes.iter().enumerate() {
        if s == 1 {
            return Err(Error::invalid(format!(
                "class {c} has a single sample; need at least 2 to populate both sides"
            )));
        }
    }
    let total = (labels.len() as f64 * test_fraction).round() as usize;
    let alloc = apportion(&sizes, total);
    for (c, (&a, &s)) in alloc.iter().zip(&sizes).enumerate() {
        if s > 0 && (a == 0 || a == s) {
            return Err(Error::invalid(format!(
                "class {c} with {s} samples cannot populate both sides at fraction {test_fraction}"
            )));
        }
    }

    let mut rng = seed::child_rng(seed, "stratified_split", 0);
    let mut split = SplitIndices {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (members, &k) in by_class.iter_mut().zip(&alloc) {
        members.shuffle(&mut rng);
        split.test.extend_from_slice(&members[..k]);
        split.train.extend_from_slice(&members[k..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Stratified k-fold partition. Each class is shuffled and dealt round-robin
/// into folds, continuing the deal across classes so fold sizes differ by at
/// most one overall.
pub fn kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<SplitIndices>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut by_class = indices_by_class(labels);
    if let Some(min) = by_class.iter().map(Vec::len).filter(|&s| s > 0).min() {
        if k > min {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the smallest class count {min}"
            )));
        }
    }
    let mut rng = seed::child_rng(seed, "kfold", k as u64);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut test = folds[f].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            SplitIndices { train, test }
        })
        .collect())
}
