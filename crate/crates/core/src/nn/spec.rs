use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NUM_CLASSES;

/// One convolutional stage. A residual block applies
/// `conv(k, stride) → ReLU → conv(k, 1)` and adds its input back, through a
/// 1×1 projection when the channel count or stride changes the shape. A plain
/// block is a single `conv → ReLU`. Convolutions use "same" padding
/// `(kernel − 1) / 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub residual: bool,
}

/// How the flat feature row is laid out as a sequence: feature `t * channels + c`
/// becomes step `t`, channel `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqShape {
    pub steps: usize,
    pub channels: usize,
}

/// Hybrid CNN → BiLSTM → self-attention classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSpec {
    pub input_dim: usize,
    pub seq_shape: SeqShape,
    pub conv_blocks: Vec<ConvBlockSpec>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Head counts of the stacked attention blocks, in order.
    pub attention_heads: Vec<usize>,
    /// Widths of the dense head after pooling; the last entry is the class count.
    pub dense_sizes: Vec<usize>,
    pub dropout: f64,
    pub classes: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

/// Plain multilayer perceptron baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Hybrid(HybridSpec),
    Mlp(MlpSpec),
}

impl HybridSpec {
    /// Full-size enhanced architecture for 988-feature rows: 76 steps × 13
    /// channels, conv (64,k5) → residual (128,k3) → residual (128,k3),
    /// two BiLSTM layers of 128 units, attention with 16 then 8 heads,
    /// dense head 512 → 256 → 128 → 3, dropout 0.3.
    pub fn enhanced() -> Self {
        Self {
            input_dim: 988,
            seq_shape: SeqShape {
                steps: 76,
                channels: 13,
            },
            conv_blocks: vec![
                ConvBlockSpec {
                    channels: 64,
                    kernel: 5,
                    stride: 1,
                    residual: false,
                },
                ConvBlockSpec {
                    channels: 128,
                    kernel: 3,
                    stride: 1,
                    residual: true,
                },
                ConvBlockSpec {
                    channels: 128,
                    kernel: 3,
                    stride: 1,
                    residual: true,
                },
            ],
            lstm_hidden: 128,
            lstm_layers: 2,
            attention_heads: vec![16, 8],
            dense_sizes: vec![256, 128, NUM_CLASSES],
            dropout: 0.3,
            classes: NUM_CLASSES,
            layer_norm_eps: default_ln_eps(),
        }
    }

    /// The plain hybrid baseline derived from an enhanced spec: no residual
    /// blocks, one BiLSTM layer, a single 8-head attention block.
    pub fn standard_from(enhanced: &HybridSpec) -> Self {
        let mut s = enhanced.clone();
        s.conv_blocks.iter_mut().for_each(|b| b.residual = false);
        s.lstm_layers = 1;
        s.attention_heads = vec![8];
        s
    }

    /// Desk-scale variant for `input_dim` features: a short sequence and
    /// narrow layers, keeping the enhanced topology (residual conv, two
    /// BiLSTM layers, 16 + 8 attention heads).
    pub fn fast(input_dim: usize) -> Self {
        let seq_shape = fast_seq_shape(input_dim);
        Self {
            input_dim,
            seq_shape,
            conv_blocks: vec![
                ConvBlockSpec {
                    channels: 16,
                    kernel: 3,
                    stride: 1,
                    residual: false,
                },
                ConvBlockSpec {
                    channels: 32,
                    kernel: 3,
                    stride: 1,
                    residual: true,
                },
            ],
            lstm_hidden: 16,
            lstm_layers: 2,
            attention_heads: vec![16, 8],
            dense_sizes: vec![32, NUM_CLASSES],
            dropout: 0.3,
            classes: NUM_CLASSES,
            layer_norm_eps: default_ln_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.seq_shape.steps * self.seq_shape.channels != self.input_dim {
            return bad(format!(
                "seq_shape {}x{} does not cover input_dim {}",
                self.seq_shape.steps, self.seq_shape.channels, self.input_dim
            ));
        }
        if self.seq_shape.steps == 0 || self.seq_shape.channels == 0 {
            return bad("seq_shape dimensions must be positive".into());
        }
        let mut len = self.seq_shape.steps;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.channels == 0 || b.kernel == 0 || b.stride == 0 {
                return bad(format!(
                    "conv block {i}: channels, kernel and stride must be positive"
                ));
            }
            if b.kernel % 2 == 0 {
                return bad(format!(
                    "conv block {i}: kernel {} must be odd for same padding",
                    b.kernel
                ));
            }
            len = (len - 1) / b.stride + 1;
        }
        if len == 0 {
            return bad("convolution stack leaves an empty sequence".into());
        }
        if self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return bad("lstm_hidden and lstm_layers must be positive".into());
        }
        let width = 2 * self.lstm_hidden;
        for (i, &h) in self.attention_heads.iter().enumerate() {
            if h == 0 || width % h != 0 {
                return bad(format!(
                    "attention block {i}: {h} heads do not divide the attended width {width}"
                ));
            }
        }
        check_dropout(self.dropout)?;
        check_dense(&self.dense_sizes, self.classes)?;
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Width of each BiLSTM output step and of the attention blocks.
    pub fn model_width(&self) -> usize {
        2 * self.lstm_hidden
    }
}

/// Pick `steps × channels = input_dim`, preferring the smallest channel count
/// from 8 to 16, then from 2 to 7, that leaves at least 4 steps.
pub fn fast_seq_shape(input_dim: usize) -> SeqShape {
    let channels = (8..=16)
        .chain(2..8)
        .find(|c| input_dim % c == 0 && input_dim / c >= 4)
        .unwrap_or(1);
    SeqShape {
        steps: input_dim / channels,
        channels,
    }
}

impl MlpSpec {
    /// `input_dim → 256 → 128 → 3` with ReLU and dropout 0.3.
    pub fn baseline(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![256, 128],
            dropout: 0.3,
            classes: NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.classes < 2 {
            return Err(Error::Spec(
                "MLP widths must be positive and classes >= 2".into(),
            ));
        }
        check_dropout(self.dropout)
    }
}

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Spec(format!("dropout {p} outside [0, 1)")));
    }
    Ok(())
}

fn check_dense(sizes: &[usize], classes: usize) -> Result<()> {
    match sizes.last() {
        Some(&last) if last == classes && !sizes.contains(&0) => Ok(()),
        _ => Err(Error::Spec(format!(
            "dense_sizes {sizes:?} must be positive and end in the class count {classes}"
        ))),
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Hybrid(h) => h.validate(),
            ModelSpec::Mlp(m) => m.validate(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelSpec::Hybrid(h) => h.input_dim,
            ModelSpec::Mlp(m) => m.input_dim,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Hybrid(h) => h.classes,
            ModelSpec::Mlp(m) => m.classes,
        }
    }

    /// Same architecture family re-targeted at a different input width
    /// (used when ablation drops feature columns).
    pub fn with_input_dim(&self, input_dim: usize) -> Self {
        match self {
            ModelSpec::Mlp(m) => ModelSpec::Mlp(MlpSpec {
                input_dim,
                ..m.clone()
            }),
            ModelSpec::Hybrid(h) => {
                let seq_shape = if h.input_dim == input_dim {
                    h.seq_shape
                } else {
                    fast_seq_shape(input_dim)
                };
                ModelSpec::Hybrid(HybridSpec {
                    input_dim,
                    seq_shape,
                    ..h.clone()
                })
            }
        }
    }
}
