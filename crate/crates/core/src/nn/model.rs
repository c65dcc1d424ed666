use indexmap::IndexMap;
use rand::Rng as _;
use rayon::prelude::*;

use super::spec::{ConvBlockSpec, HybridSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::tensor::{finite_diff_check, GradCheckReport, Graph, Tensor, Var};

/// Named parameter tensors in a fixed, architecture-defined order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: IndexMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Spec(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Total number of scalar parameters.
pub fn count_parameters(params: &ModelParams) -> usize {
    params.tensors.values().map(Tensor::len).sum()
}

/// Parameters registered as leaves of one [`Graph`], by name.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Registers every tensor; `trainable` leaves receive gradients.
    pub fn bind(g: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Self { vars }
    }

    /// Pairs the names of `params` with already-registered leaves, in order.
    pub fn from_vars(params: &ModelParams, vars: &[Var]) -> Result<Self> {
        if vars.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} vars for {} parameters",
                vars.len(),
                params.len()
            )));
        }
        let vars = params
            .tensors
            .keys()
            .cloned()
            .zip(vars.iter().copied())
            .collect();
        Ok(Self { vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Spec(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Dropout is active only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, g: &mut Graph, x: Var, rate: f64) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => g.dropout(x, rate, *rng),
        }
    }
}

// ------------------------------------------------------------------ init

struct Init {
    rng: Rng,
    params: ModelParams,
}

impl Init {
    /// Weights uniform in ±1/√fan_in.
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.params.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) -> Result<()> {
        self.params.insert(name, Tensor::full(shape, value))
    }

    fn linear(&mut self, prefix: &str, inp: usize, out: usize) -> Result<()> {
        self.weight(format!("{prefix}.w"), &[inp, out], inp)?;
        self.fill(format!("{prefix}.b"), &[out], 0.0)
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        self.weight(format!("{prefix}.w"), &[cout, cin, k], cin * k)?;
        self.fill(format!("{prefix}.b"), &[cout], 0.0)
    }

    fn lstm(&mut self, prefix: &str, inp: usize, hidden: usize) -> Result<()> {
        self.weight(format!("{prefix}.w"), &[inp, 4 * hidden], inp)?;
        self.weight(format!("{prefix}.u"), &[hidden, 4 * hidden], hidden)?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        self.params.insert(format!("{prefix}.b"), Tensor::vector(b))
    }
}

/// Initializes parameters for `spec`, deterministically from `seed`.
///
/// Weights are uniform in ±1/√fan_in, biases zero, LSTM forget-gate biases 1,
/// layer-norm gains 1.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut init = Init {
        rng: seed::rng(seed),
        params: ModelParams::new(),
    };
    match spec {
        ModelSpec::Hybrid(h) => build_hybrid(h, &mut init)?,
        ModelSpec::Mlp(m) => {
            let mut width = m.input_dim;
            for (i, &w) in m
                .hidden
                .iter()
                .chain(std::iter::once(&m.classes))
                .enumerate()
            {
                init.linear(&format!("dense{i}"), width, w)?;
                width = w;
            }
        }
    }
    Ok(init.params)
}

fn build_hybrid(h: &HybridSpec, init: &mut Init) -> Result<()> {
    let mut ch = h.seq_shape.channels;
    for (i, b) in h.conv_blocks.iter().enumerate() {
        let p = format!("conv{i}");
        if b.residual {
            init.conv(&format!("{p}.a"), ch, b.channels, b.kernel)?;
            init.conv(&format!("{p}.b"), b.channels, b.channels, b.kernel)?;
            if needs_projection(ch, b) {
                init.conv(&format!("{p}.proj"), ch, b.channels, 1)?;
            }
        } else {
            init.conv(&p, ch, b.channels, b.kernel)?;
        }
        ch = b.channels;
    }
    let mut feat = ch;
    for l in 0..h.lstm_layers {
        for dir in ["fwd", "bwd"] {
            init.lstm(&format!("lstm{l}.{dir}"), feat, h.lstm_hidden)?;
        }
        feat = 2 * h.lstm_hidden;
    }
    let m = h.model_width();
    for i in 0..h.attention_heads.len() {
        for proj in ["q", "k", "v", "o"] {
            init.linear(&format!("attn{i}.{proj}"), m, m)?;
        }
        init.fill(format!("attn{i}.ln.gain"), &[m], 1.0)?;
        init.fill(format!("attn{i}.ln.bias"), &[m], 0.0)?;
    }
    let mut width = 2 * m;
    for (i, &w) in h.dense_sizes.iter().enumerate() {
        init.linear(&format!("dense{i}"), width, w)?;
        width = w;
    }
    Ok(())
}

fn needs_projection(cin: usize, b: &ConvBlockSpec) -> bool {
    cin != b.channels || b.stride != 1
}

// ---------------------------------------------------------------- layers

/// `x · w + b` over the last axis.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Parameters of one convolutional block.
#[derive(Debug, Clone, Copy)]
pub struct ConvBlockVars {
    pub w1: Var,
    pub b1: Var,
    /// Second convolution of a residual branch.
    pub second: Option<(Var, Var)>,
    /// 1×1 shortcut projection.
    pub proj: Option<(Var, Var)>,
}

/// Plain block: `relu(conv(x))`. Residual block: `shortcut(x) + f(x)` with
/// `f(x) = conv₂(relu(conv₁(x)))`; `shortcut` is the identity or a 1×1
/// projection. `x` is `[B, C, L]`.
pub fn residual_block(
    g: &mut Graph,
    x: Var,
    spec: &ConvBlockSpec,
    p: &ConvBlockVars,
) -> Result<Var> {
    let pad = (spec.kernel - 1) / 2;
    let a = g.conv1d(x, p.w1, p.b1, spec.stride, pad)?;
    let Some((w2, b2)) = p.second else {
        return Ok(g.relu(a));
    };
    let a = g.relu(a);
    let f = g.conv1d(a, w2, b2, 1, pad)?;
    let shortcut = match p.proj {
        Some((pw, pb)) => g.conv1d(x, pw, pb, spec.stride, 0)?,
        None => x,
    };
    if g.shape(shortcut) != g.shape(f) {
        return Err(Error::shape(
            "residual_block",
            format!(
                "shortcut {:?} vs branch {:?}",
                g.shape(shortcut),
                g.shape(f)
            ),
        ));
    }
    g.add(shortcut, f)
}

/// One LSTM direction: input weights `w [F, 4H]`, recurrent `u [H, 4H]`,
/// a single bias `b [4H]`; gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Runs one direction over `x [B, T, F]`, returning hidden states `[B, T, H]`
/// in input time order. Initial hidden and cell states are zero.
pub fn lstm_direction(
    g: &mut Graph,
    x: Var,
    p: &LstmVars,
    hidden: usize,
    reverse: bool,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::shape(
            "lstm",
            format!("expected [B, T>=1, F], got {shape:?}"),
        ));
    }
    let (batch, steps) = (shape[0], shape[1]);
    let xw = linear(g, x, p.w, p.b)?;
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outs = vec![None; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let mut gates = g.select_step(xw, t)?;
        if let Some(hp) = h {
            let rec = g.matmul(hp, p.u)?;
            gates = g.add(gates, rec)?;
        }
        let i = g.slice_last(gates, 0, hidden)?;
        let i = g.sigmoid(i);
        let f = g.slice_last(gates, hidden, hidden)?;
        let f = g.sigmoid(f);
        let cand = g.slice_last(gates, 2 * hidden, hidden)?;
        let cand = g.tanh(cand);
        let o = g.slice_last(gates, 3 * hidden, hidden)?;
        let o = g.sigmoid(o);
        let ic = g.mul(i, cand)?;
        let c_new = match c {
            Some(cp) => {
                let fc = g.mul(f, cp)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        debug_assert_eq!(g.shape(h_new), &[batch, hidden]);
        outs[t] = Some(h_new);
        h = Some(h_new);
        c = Some(c_new);
    }
    let outs: Vec<Var> = outs
        .into_iter()
        .map(|v| v.expect("every step visited"))
        .collect();
    g.stack_steps(&outs)
}

/// Bidirectional layer: forward and backward hidden sequences concatenated
/// per time step, `[B, T, F] → [B, T, 2H]`.
pub fn bilstm_forward(
    g: &mut Graph,
    x: Var,
    fwd: &LstmVars,
    bwd: &LstmVars,
    hidden: usize,
) -> Result<Var> {
    let f = lstm_direction(g, x, fwd, hidden, false)?;
    let b = lstm_direction(g, x, bwd, hidden, true)?;
    g.concat_last(&[f, b])
}

/// Projections of one attention block plus its layer norm.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

/// Scaled dot-product self-attention over `x [B, T, M]` with `heads` heads,
/// followed by the output projection. Attention weights `[B·heads, T, T]` are
/// pushed to `capture` when given.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    heads: usize,
    p: &AttentionVars,
    capture: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(
            "attention",
            format!("expected [B, T, M], got {shape:?}"),
        ));
    }
    let (b, t, m) = (shape[0], shape[1], shape[2]);
    if heads == 0 || m % heads != 0 {
        return Err(Error::shape(
            "attention",
            format!("{heads} heads do not divide width {m}"),
        ));
    }
    let d = m / heads;
    let split = |g: &mut Graph, v: Var| -> Result<Var> {
        let v = g.reshape(v, &[b, t, heads, d])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;
        g.reshape(v, &[b * heads, t, d])
    };
    let q = linear(g, x, p.wq, p.bq)?;
    let q = split(g, q)?;
    let k = linear(g, x, p.wk, p.bk)?;
    let k = split(g, k)?;
    let v = linear(g, x, p.wv, p.bv)?;
    let v = split(g, v)?;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax(scores, 2)?;
    if let Some(cap) = capture {
        cap.push(g.value(weights).clone());
    }
    let ctx = g.bmm(weights, v, false)?;
    let ctx = g.reshape(ctx, &[b, heads, t, d])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, t, m])?;
    linear(g, ctx, p.wo, p.bo)
}

/// `layer_norm(x + dropout(attention(x)))`.
pub fn attention_block(
    g: &mut Graph,
    x: Var,
    heads: usize,
    p: &AttentionVars,
    dropout: f64,
    ln_eps: f64,
    mode: &mut Mode,
    capture: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let a = multi_head_attention(g, x, heads, p, capture)?;
    let a = mode.dropout(g, a, dropout)?;
    let r = g.add(x, a)?;
    g.layer_norm(r, p.ln_gain, p.ln_bias, ln_eps)
}

// --------------------------------------------------------------- forward

fn conv_vars(p: &BoundParams, i: usize, cin: usize, b: &ConvBlockSpec) -> Result<ConvBlockVars> {
    let n = |s: &str| p.var(&format!("conv{i}{s}"));
    if !b.residual {
        return Ok(ConvBlockVars {
            w1: n(".w")?,
            b1: n(".b")?,
            second: None,
            proj: None,
        });
    }
    Ok(ConvBlockVars {
        w1: n(".a.w")?,
        b1: n(".a.b")?,
        second: Some((n(".b.w")?, n(".b.b")?)),
        proj: if needs_projection(cin, b) {
            Some((n(".proj.w")?, n(".proj.b")?))
        } else {
            None
        },
    })
}

fn lstm_vars(p: &BoundParams, prefix: &str) -> Result<LstmVars> {
    Ok(LstmVars {
        w: p.var(&format!("{prefix}.w"))?,
        u: p.var(&format!("{prefix}.u"))?,
        b: p.var(&format!("{prefix}.b"))?,
    })
}

fn attention_vars(p: &BoundParams, i: usize) -> Result<AttentionVars> {
    let n = |s: &str| p.var(&format!("attn{i}.{s}"));
    Ok(AttentionVars {
        wq: n("q.w")?,
        bq: n("q.b")?,
        wk: n("k.w")?,
        bk: n("k.b")?,
        wv: n("v.w")?,
        bv: n("v.b")?,
        wo: n("o.w")?,
        bo: n("o.b")?,
        ln_gain: n("ln.gain")?,
        ln_bias: n("ln.bias")?,
    })
}

/// Records the forward pass for `x [B, input_dim]` and returns class
/// probabilities `[B, classes]`.
pub fn forward(
    g: &mut Graph,
    spec: &ModelSpec,
    p: &BoundParams,
    x: Var,
    mode: &mut Mode,
    mut capture: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != spec.input_dim() {
        return Err(Error::shape(
            "forward",
            format!("expected [B, {}], got {shape:?}", spec.input_dim()),
        ));
    }
    let batch = shape[0];
    let (h, dense_in, dropout): (Var, _, f64) = match spec {
        ModelSpec::Mlp(m) => (x, m.hidden.len() + 1, m.dropout),
        ModelSpec::Hybrid(s) => {
            let seq = g.reshape(x, &[batch, s.seq_shape.steps, s.seq_shape.channels])?;
            let mut h = g.permute(seq, &[0, 2, 1])?;
            let mut ch = s.seq_shape.channels;
            for (i, b) in s.conv_blocks.iter().enumerate() {
                let v = conv_vars(p, i, ch, b)?;
                h = residual_block(g, h, b, &v)?;
                ch = b.channels;
            }
            h = g.permute(h, &[0, 2, 1])?;
            for l in 0..s.lstm_layers {
                let f = lstm_vars(p, &format!("lstm{l}.fwd"))?;
                let r = lstm_vars(p, &format!("lstm{l}.bwd"))?;
                h = bilstm_forward(g, h, &f, &r, s.lstm_hidden)?;
            }
            for (i, &heads) in s.attention_heads.iter().enumerate() {
                let v = attention_vars(p, i)?;
                h = attention_block(
                    g,
                    h,
                    heads,
                    &v,
                    s.dropout,
                    s.layer_norm_eps,
                    mode,
                    capture.as_deref_mut(),
                )?;
            }
            h = g.pool_avg_max(h)?;
            (h, s.dense_sizes.len(), s.dropout)
        }
    };
    let mut h = h;
    for i in 0..dense_in {
        let w = p.var(&format!("dense{i}.w"))?;
        let b = p.var(&format!("dense{i}.b"))?;
        h = linear(g, h, w, b)?;
        if i + 1 < dense_in {
            h = g.relu(h);
            h = mode.dropout(g, h, dropout)?;
        }
    }
    g.softmax(h, 1)
}

/// A model specification together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

/// Rows per inference chunk.
const INFER_CHUNK: usize = 256;

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = build(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn num_parameters(&self) -> usize {
        count_parameters(&self.params)
    }

    /// Eval-mode class probabilities for row-major `rows`, flattened
    /// `[n, classes]`. Chunks run in parallel on frozen parameters.
    pub fn predict_proba(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.spec.input_dim();
        if rows.len() % d != 0 {
            return Err(Error::shape(
                "predict",
                format!("{} values is not a multiple of width {d}", rows.len()),
            ));
        }
        let chunks: Vec<Vec<f64>> = rows
            .par_chunks(INFER_CHUNK * d)
            .map(|chunk| self.forward_eval(chunk, None))
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }

    /// Argmax class per row (ties go to the lower class index).
    pub fn predict(&self, rows: &[f64]) -> Result<Vec<usize>> {
        let k = self.spec.classes();
        Ok(self.predict_proba(rows)?.chunks(k).map(argmax).collect())
    }

    /// Eval-mode forward of one batch, optionally capturing attention weights.
    pub fn forward_eval(
        &self,
        rows: &[f64],
        capture: Option<&mut Vec<Tensor>>,
    ) -> Result<Vec<f64>> {
        let d = self.spec.input_dim();
        let mut g = Graph::new();
        let p = BoundParams::bind(&mut g, &self.params, false);
        let x = g.constant(Tensor::new(vec![rows.len() / d, d], rows.to_vec())?);
        let probs = forward(&mut g, &self.spec, &p, x, &mut Mode::Eval, capture)?;
        Ok(g.value(probs).data().to_vec())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Finite-difference audit of the smoothed cross-entropy loss of `model`
/// with respect to every parameter, on the eval-mode forward of
/// `rows`/`labels`.
pub fn model_gradient_check(
    model: &Model,
    rows: &[f64],
    labels: &[usize],
    smoothing: f64,
    eps: f64,
) -> Result<GradCheckReport> {
    let d = model.spec.input_dim();
    let tensors: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
    finite_diff_check(
        |g, vars| {
            let p = BoundParams::from_vars(&model.params, vars)?;
            let x = g.constant(Tensor::new(vec![rows.len() / d, d], rows.to_vec())?);
            let probs = forward(g, &model.spec, &p, x, &mut Mode::Eval, None)?;
            g.smoothed_cross_entropy(probs, labels, smoothing)
        },
        &tensors,
        eps,
    )
}
