//! Classification metrics, Friedman and Wilcoxon significance tests,
//! Bonferroni correction and bootstrap confidence intervals.

mod bootstrap;
mod metrics;
mod significance;

pub use bootstrap::{bootstrap_ci, ConfidenceInterval};
pub use metrics::{metrics, overfitting_gap, ClassMetrics, ConfusionMatrix, Metrics};
pub use significance::{
    average_ranks, bonferroni, friedman, pairwise_wilcoxon, wilcoxon_signed_rank, PairwiseTest,
    StatTestResult, WILCOXON_EXACT_MAX_N,
};
