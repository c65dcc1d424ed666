//! Per-feature relevance scores, their min-max consensus, Monte-Carlo Shapley
//! attribution and label/feature correlation analysis.

mod consensus;
mod correlation;
mod scores;
mod shapley;

pub use consensus::{
    compute_importance, consensus_rank, ImportanceConfig, ImportanceTable, METHODS,
};
pub use correlation::{correlation_matrix, CorrelationMatrix};
pub use scores::{anova_f, equal_frequency_bins, label_correlation, mutual_information, pearson_r};
pub use shapley::{
    background_mean, mean_abs_phi, shapley_batch, shapley_mc, ShapleyConfig, ShapleyReport,
};
