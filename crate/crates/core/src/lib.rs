//! Desk-scale laboratory for EEG emotion classification on pre-featurized
//! recordings.
//!
//! The crate covers the whole pipeline: ingesting and normalizing the feature
//! table ([`data`]), a small fp64 reverse-mode autodiff engine ([`tensor`]),
//! the hybrid CNN / BiLSTM / attention classifier and an MLP baseline
//! ([`nn`]), the AdamW training protocol ([`train`]), from-scratch Random
//! Forest and Extra Trees baselines ([`forest`]), five-method consensus
//! feature importance with Monte-Carlo Shapley attribution ([`importance`]),
//! nonparametric model comparison ([`stats`]) and the study orchestration
//! that ties them together ([`experiments`]).
//!
//! Everything that consumes randomness takes an explicit seed; identical
//! inputs and seeds give bit-identical outputs.

pub mod data;
pub mod error;
pub mod experiments;
pub mod forest;
pub mod importance;
pub mod nn;
pub mod seed;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Number of emotion classes (Neutral, Positive, Negative).
pub const NUM_CLASSES: usize = 3;
