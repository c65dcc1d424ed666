//! Dataset ingestion and preparation: the feature table, z-score
//! normalization, stratified splitting and folds, feature-space augmentation,
//! synthetic stand-in data and feature categorization.

mod augment;
mod categories;
mod normalize;
mod split;
mod synth;
mod table;

pub use augment::{augment, AugmentConfig};
pub use categories::{categorize_features, Category, CategoryMap, CategoryRule, MatchKind};
pub use normalize::Normalizer;
pub use split::{kfold, stratified_split, SplitIndices};
pub use synth::{synth_generate, synth_rules, SynthConfig};
pub use table::{FeatureTable, CLASS_NAMES, LABEL_COLUMN};
