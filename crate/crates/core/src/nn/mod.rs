//! Hybrid convolutional / recurrent / attention classifier and the MLP
//! baseline, assembled from [`crate::tensor`] primitives.
//!
//! Hybrid pipeline: flat row → `[steps, channels]` sequence → convolution
//! blocks → stacked BiLSTM → attention blocks → average + max pooling →
//! dense head → softmax.

mod checkpoint;
mod model;
mod spec;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use model::{
    argmax, attention_block, bilstm_forward, build, count_parameters, forward, linear,
    lstm_direction, model_gradient_check, multi_head_attention, residual_block, AttentionVars,
    BoundParams, ConvBlockVars, LstmVars, Mode, Model, ModelParams,
};
pub use spec::{fast_seq_shape, ConvBlockSpec, HybridSpec, MlpSpec, ModelSpec, SeqShape};

#[cfg(test)]
mod tests;
