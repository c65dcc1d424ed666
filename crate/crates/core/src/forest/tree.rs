use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// `gini(node) − weighted gini(children)` at this node.
        impurity_decrease: f64,
        n_samples: usize,
    },
    Leaf {
        /// Class distribution of the training samples that reached the leaf.
        probs: Vec<f64>,
        n_samples: usize,
    },
}

/// Flat array of nodes; index 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_probs(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { probs, .. } => return probs,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Gini impurity `1 − Σ (c_k / n)²`; `None` for an all-zero count vector.
pub fn gini(counts: &[usize]) -> Option<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    Some(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

pub(crate) struct TreeParams {
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub randomized_threshold: bool,
    pub classes: usize,
}

/// Column-major feature matrix.
pub(crate) struct Columns<'a> {
    pub cols: &'a [Vec<f64>],
    pub labels: &'a [usize],
}

struct Candidate {
    /// `Σ_k cl_k²/nl + Σ_k cr_k²/nr`; larger is better.
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    fn beats(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.score > o.score
                    || (self.score == o.score
                        && (self.feature, self.threshold) < (o.feature, o.threshold))
            }
        }
    }
}

fn square_sum_over_n(counts: &[usize], n: usize) -> f64 {
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

pub(crate) fn grow(data: &Columns, samples: Vec<usize>, p: &TreeParams, rng: &mut Rng) -> Tree {
    let mut nodes = Vec::new();
    // (node slot, samples, depth)
    let mut stack = vec![(0usize, samples, 0usize)];
    nodes.push(None);
    while let Some((slot, idx, depth)) = stack.pop() {
        let mut counts = vec![0usize; p.classes];
        idx.iter().for_each(|&i| counts[data.labels[i]] += 1);
        let n = idx.len();
        let node_gini = gini(&counts).unwrap_or(0.0);
        let can_split = node_gini > 0.0
            && n >= p.min_samples_split
            && n >= 2 * p.min_samples_leaf
            && p.max_depth.is_none_or(|d| depth < d);
        let best = if can_split {
            best_split(data, &idx, &counts, p, rng)
        } else {
            None
        };
        let parent_score = square_sum_over_n(&counts, n);
        let split = best.filter(|b| b.score > parent_score * (1.0 + 1e-12));
        let Some(b) = split else {
            let probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
            nodes[slot] = Some(TreeNode::Leaf {
                probs,
                n_samples: n,
            });
            continue;
        };
        let col = &data.cols[b.feature];
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= b.threshold);
        let decrease = (b.score - parent_score) / n as f64;
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(None);
        nodes.push(None);
        nodes[slot] = Some(TreeNode::Split {
            feature: b.feature,
            threshold: b.threshold,
            left: l,
            right: r,
            impurity_decrease: decrease,
            n_samples: n,
        });
        stack.push((r, ri, depth + 1));
        stack.push((l, li, depth + 1));
    }
    Tree {
        nodes: nodes
            .into_iter()
            .map(|n| n.expect("every slot filled"))
            .collect(),
    }
}

/// Visits features in random order until `max_features` non-constant ones
/// have been evaluated (or all are exhausted).
fn best_split(
    data: &Columns,
    idx: &[usize],
    counts: &[usize],
    p: &TreeParams,
    rng: &mut Rng,
) -> Option<Candidate> {
    let d = data.cols.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut best: Option<Candidate> = None;
    let mut evaluated = 0;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
    for &f in &order {
        if evaluated >= p.max_features {
            break;
        }
        let col = &data.cols[f];
        let (lo, hi) = idx
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(col[i]), hi.max(col[i]))
            });
        if !(hi > lo) {
            continue;
        }
        evaluated += 1;
        let cand = if p.randomized_threshold {
            random_threshold_split(col, data.labels, idx, f, lo, hi, p, rng)
        } else {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (col[i], data.labels[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            exhaustive_split(&pairs, counts, f, p)
        };
        if let Some(c) = cand {
            if c.beats(&best) {
                best = Some(c);
            }
        }
    }
    best
}

fn exhaustive_split(
    pairs: &[(f64, usize)],
    counts: &[usize],
    feature: usize,
    p: &TreeParams,
) -> Option<Candidate> {
    let n = pairs.len();
    let mut left = vec![0usize; p.classes];
    let mut best: Option<Candidate> = None;
    for i in 0..n - 1 {
        left[pairs[i].1] += 1;
        let (a, b) = (pairs[i].0, pairs[i + 1].0);
        if a == b {
            continue;
        }
        let nl = i + 1;
        let nr = n - nl;
        if nl < p.min_samples_leaf || nr < p.min_samples_leaf {
            continue;
        }
        let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
        let score = square_sum_over_n(&left, nl) + square_sum_over_n(&right, nr);
        let mut threshold = a + (b - a) / 2.0;
        if threshold >= b {
            threshold = a;
        }
        let c = Candidate {
            score,
            feature,
            threshold,
        };
        if best.as_ref().is_none_or(|o| score > o.score) {
            best = Some(c);
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn random_threshold_split(
    col: &[f64],
    labels: &[usize],
    idx: &[usize],
    feature: usize,
    lo: f64,
    hi: f64,
    p: &TreeParams,
    rng: &mut Rng,
) -> Option<Candidate> {
    let mut threshold = rng.random_range(lo..hi);
    if threshold >= hi {
        threshold = lo;
    }
    let mut left = vec![0usize; p.classes];
    let mut right = vec![0usize; p.classes];
    for &i in idx {
        if col[i] <= threshold {
            left[labels[i]] += 1;
        } else {
            right[labels[i]] += 1;
        }
    }
    let (nl, nr) = (left.iter().sum::<usize>(), right.iter().sum::<usize>());
    if nl < p.min_samples_leaf.max(1) || nr < p.min_samples_leaf.max(1) {
        return None;
    }
    let score = square_sum_over_n(&left, nl) + square_sum_over_n(&right, nr);
    Some(Candidate {
        score,
        feature,
        threshold,
    })
}
