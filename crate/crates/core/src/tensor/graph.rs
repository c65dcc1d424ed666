use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor applied to probabilities before taking logs in the loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        groups: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        inner: usize,
        axis_len: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    PoolAvgMax {
        x: Var,
        steps: usize,
        width: usize,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    ConcatLast {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    SliceLast {
        x: Var,
        start: usize,
        width: usize,
        in_width: usize,
    },
    SelectStep {
        x: Var,
        step: usize,
        steps: usize,
        width: usize,
    },
    StackSteps {
        parts: Vec<Var>,
        width: usize,
    },
    Sum(Var),
    Mean(Var),
    SmoothedCe {
        probs: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Counters from the most recent [`Graph::backward`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes reachable from the loss through tracked inputs.
    pub reachable: usize,
    /// Nodes whose backward rule ran.
    pub visited: usize,
    /// Largest number of times any single node was visited.
    pub max_visits_per_node: usize,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    last_stats: BackwardStats,
}

/// Which operand of a binary op is broadcast, if any.
enum Broadcast {
    None,
    Left,
    Right,
}

fn broadcast_rule(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::None)
    } else if a.len() > b.len() && a.ends_with(b) {
        Ok(Broadcast::Right)
    } else if b.len() > a.len() && b.ends_with(a) {
        Ok(Broadcast::Left)
    } else {
        Err(Error::shape(
            op,
            format!("{a:?} and {b:?} are not trailing-aligned"),
        ))
    }
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    shape
        .last()
        .copied()
        .ok_or_else(|| Error::shape(op, "scalar input has no last dimension"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Tracked leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a tracked leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn last_backward_stats(&self) -> BackwardStats {
        self.last_stats
    }

    // ---------------------------------------------------------------- ops

    /// `[.., k] · [k, n] -> [.., n]`; leading dimensions of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let k = sb[0];
        let n = sb[1];
        let m = sa.iter().product::<usize>() / k;
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.tracked(&[a, b]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::MatMul { a, b, m, k, n },
            rg,
        ))
    }

    /// Batched product over the leading axis: `[g,m,k]·[g,k,n]`, or
    /// `[g,m,k]·[g,n,k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bad = || Error::shape("bmm", format!("{sa:?} x {sb:?} (trans_b = {trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (groups, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        if (trans_b && sb[2] != k) || (!trans_b && sb[1] != k) {
            return Err(bad());
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; groups * m * n];
        for g in 0..groups {
            let ag = &ad[g * m * k..(g + 1) * m * k];
            let bg = &bd[g * k * n..(g + 1) * k * n];
            let og = &mut out[g * m * n..(g + 1) * m * n];
            if trans_b {
                kernels::matmul_bt_acc(ag, bg, og, m, k, n);
            } else {
                kernels::matmul_acc(ag, bg, og, m, k, n);
            }
        }
        let rg = self.tracked(&[a, b]);
        let value = Tensor {
            shape: vec![groups, m, n],
            data: out,
        };
        Ok(self.push(
            value,
            Op::Bmm {
                a,
                b,
                groups,
                m,
                k,
                n,
                trans_b,
            },
            rg,
        ))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let rule = broadcast_rule(op, ta.shape(), tb.shape())?;
        let value = match rule {
            Broadcast::None => Tensor {
                shape: ta.shape().to_vec(),
                data: ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            },
            Broadcast::Right => {
                let small = tb.data();
                let mut data = Vec::with_capacity(ta.len());
                for chunk in ta.data().chunks_exact(small.len()) {
                    data.extend(chunk.iter().zip(small).map(|(&x, &y)| f(x, y)));
                }
                Tensor {
                    shape: ta.shape().to_vec(),
                    data,
                }
            }
            Broadcast::Left => {
                let small = ta.data();
                let mut data = Vec::with_capacity(tb.len());
                for chunk in tb.data().chunks_exact(small.len()) {
                    data.extend(small.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
                }
                Tensor {
                    shape: tb.shape().to_vec(),
                    data,
                }
            }
        };
        Ok((value, self.tracked(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let value = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v * c).collect(),
        };
        let rg = self.tracked(&[x]);
        self.push(value, Op::Scale { x, c }, rg)
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let value = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f(v)).collect(),
        };
        let rg = self.tracked(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        if inner == 1 {
            for (row, orow) in src
                .chunks_exact(axis_len)
                .zip(out.chunks_exact_mut(axis_len))
            {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o = (v - max).exp();
                    total += *o;
                }
                orow.iter_mut().for_each(|o| *o /= total);
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * axis_len + j) * inner + i;
                    let max = (0..axis_len)
                        .map(|j| src[at(j)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for j in 0..axis_len {
                        let e = (src[at(j)] - max).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                    for j in 0..axis_len {
                        out[at(j)] /= total;
                    }
                }
            }
        }
        let rg = self.tracked(&[x]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Softmax { x, inner, axis_len },
            rg,
        ))
    }

    /// Normalize each vector along the last axis to zero mean and unit
    /// variance (population), then apply `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = last_dim("layer_norm", &shape)?;
        if self.shape(gain) != [width] || self.shape(bias) != [width] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gain/bias must be [{width}], got {:?} / {:?}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / width.max(1);
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..width {
                let h = (row[j] - mean) * rs;
                xhat[r * width + j] = h;
                out[r * width + j] = g[j] * h + b[j];
            }
        }
        let rg = self.tracked(&[x, gain, bias]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// 1-D cross-correlation. `x` is `[c_in, L]` or `[B, c_in, L]`, `w` is
    /// `[c_out, c_in, K]`, `b` is `[c_out]`. Output length is
    /// `floor((L + 2·padding − K) / stride) + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (batch, cin, len, unbatched) = match sx.as_slice() {
            [c, l] => (1, *c, *l, true),
            [bt, c, l] => (*bt, *c, *l, false),
            _ => {
                return Err(Error::shape(
                    "conv1d",
                    format!("input must be rank 2 or 3, got {sx:?}"),
                ))
            }
        };
        if sw.len() != 3 || sw[1] != cin || self.shape(b) != [sw[0]] {
            return Err(Error::shape(
                "conv1d",
                format!("input {sx:?}, kernels {sw:?}, bias {:?}", self.shape(b)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv1d", "stride must be positive"));
        }
        let (cout, k) = (sw[0], sw[2]);
        if k == 0 || k > len + 2 * padding {
            return Err(Error::shape(
                "conv1d",
                format!("kernel {k} larger than padded input {}", len + 2 * padding),
            ));
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        let dims = ConvDims {
            batch,
            cin,
            len,
            cout,
            k,
            stride,
            pad: padding,
            lout,
        };
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        let shape = if unbatched {
            vec![cout, lout]
        } else {
            vec![batch, cout, lout]
        };
        let rg = self.tracked(&[x, w, b]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Conv1d { x, w, b, dims },
            rg,
        ))
    }

    /// Global average and max pooling over the step axis:
    /// `[T, H] -> [2H]` or `[B, T, H] -> [B, 2H]`, laid out as `[mean, max]`.
    pub fn pool_avg_max(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batch, steps, width, unbatched) = match sx.as_slice() {
            [t, h] => (1, *t, *h, true),
            [b, t, h] => (*b, *t, *h, false),
            _ => {
                return Err(Error::shape(
                    "pool_avg_max",
                    format!("rank 2 or 3 expected, got {sx:?}"),
                ))
            }
        };
        if steps == 0 {
            return Err(Error::shape("pool_avg_max", "need at least one step"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; batch * 2 * width];
        let mut argmax = vec![0usize; batch * width];
        for b in 0..batch {
            for h in 0..width {
                let mut sum = 0.0;
                let mut best = f64::NEG_INFINITY;
                let mut best_t = 0;
                for t in 0..steps {
                    let v = src[(b * steps + t) * width + h];
                    sum += v;
                    if v > best {
                        best = v;
                        best_t = t;
                    }
                }
                out[b * 2 * width + h] = sum / steps as f64;
                out[b * 2 * width + width + h] = best;
                argmax[b * width + h] = best_t;
            }
        }
        let shape = if unbatched {
            vec![2 * width]
        } else {
            vec![batch, 2 * width]
        };
        let rg = self.tracked(&[x]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::PoolAvgMax {
                x,
                steps,
                width,
                argmax,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let mut seen = vec![false; in_shape.len()];
        if axes.len() != in_shape.len()
            || axes
                .iter()
                .any(|&a| a >= in_shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape(
                "permute",
                format!("axes {axes:?} for shape {in_shape:?}"),
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        kernels::permute_offsets(&in_shape, axes, |o, i| out[o] = src[i]);
        let shape = axes.iter().map(|&a| in_shape[a]).collect();
        let rg = self.tracked(&[x]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenate along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_last", "no inputs"))?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat_last",
                    format!("{s:?} vs leading {lead:?}"),
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.tracked(parts);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::ConcatLast {
                parts: parts.to_vec(),
                widths,
            },
            rg,
        ))
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let in_width = last_dim("slice_last", &sx)?;
        if start + width > in_width || width == 0 {
            return Err(Error::shape(
                "slice_last",
                format!("{start}..{} of {sx:?}", start + width),
            ));
        }
        let src = self.value(x).data();
        let rows = src.len() / in_width;
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&src[r * in_width + start..r * in_width + start + width]);
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = width;
        let rg = self.tracked(&[x]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::SliceLast {
                x,
                start,
                width,
                in_width,
            },
            rg,
        ))
    }

    /// `[B, T, F] -> [B, F]` at step `step`.
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || step >= sx[1] {
            return Err(Error::shape(
                "select_step",
                format!("step {step} of {sx:?}"),
            ));
        }
        let (batch, steps, width) = (sx[0], sx[1], sx[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * width);
        for b in 0..batch {
            let off = (b * steps + step) * width;
            out.extend_from_slice(&src[off..off + width]);
        }
        let rg = self.tracked(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![batch, width],
                data: out,
            },
            Op::SelectStep {
                x,
                step,
                steps,
                width,
            },
            rg,
        ))
    }

    /// Stack `T` tensors of shape `[B, F]` into `[B, T, F]`.
    pub fn stack_steps(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack_steps", "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 || parts.iter().any(|&p| self.shape(p) != s0.as_slice()) {
            return Err(Error::shape(
                "stack_steps",
                format!("inputs must all be [B, F], first is {s0:?}"),
            ));
        }
        let (batch, width, steps) = (s0[0], s0[1], parts.len());
        let mut out = vec![0.0; batch * steps * width];
        for (t, &p) in parts.iter().enumerate() {
            let src = self.value(p).data();
            for b in 0..batch {
                out[(b * steps + t) * width..(b * steps + t + 1) * width]
                    .copy_from_slice(&src[b * width..(b + 1) * width]);
            }
        }
        let rg = self.tracked(parts);
        Ok(self.push(
            Tensor {
                shape: vec![batch, steps, width],
                data: out,
            },
            Op::StackSteps {
                parts: parts.to_vec(),
                width,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.tracked(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.tracked(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Label-smoothed cross-entropy on probability rows `[B, C]`:
    /// `−mean_b Σ_c q_bc · ln max(p_bc, 1e−12)` with
    /// `q = (1 − ε)·onehot + ε / C`.
    pub fn smoothed_cross_entropy(
        &mut self,
        probs: Var,
        labels: &[usize],
        smoothing: f64,
    ) -> Result<Var> {
        let sp = self.shape(probs).to_vec();
        if sp.len() != 2 || sp[0] != labels.len() || sp[0] == 0 {
            return Err(Error::shape(
                "smoothed_cross_entropy",
                format!("probabilities {sp:?} for {} labels", labels.len()),
            ));
        }
        let (batch, classes) = (sp[0], sp[1]);
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::invalid("label outside the probability columns"));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::invalid(format!(
                "label smoothing {smoothing} outside [0, 1)"
            )));
        }
        let off = smoothing / classes as f64;
        let mut targets = vec![off; batch * classes];
        for (b, &l) in labels.iter().enumerate() {
            targets[b * classes + l] += 1.0 - smoothing;
        }
        let p = self.value(probs).data();
        let loss = -targets
            .iter()
            .zip(p)
            .map(|(q, &pv)| {
                if pv.is_nan() {
                    f64::NAN
                } else if *q == 0.0 {
                    0.0
                } else {
                    q * pv.max(LOG_FLOOR).ln()
                }
            })
            .sum::<f64>()
            / batch as f64;
        let rg = self.tracked(&[probs]);
        Ok(self.push(Tensor::scalar(loss), Op::SmoothedCe { probs, targets }, rg))
    }

    /// Inverted dropout: zero each element with probability `rate` and scale
    /// survivors by `1 / (1 − rate)`. Identity when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl rand::Rng) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let shape = self.shape(x).to_vec();
        let mask: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.constant(Tensor { shape, data: mask });
        self.mul(x, m)
    }

    // ----------------------------------------------------------- backward

    /// Reverse-mode sweep from a single-element `loss`. Gradients of tracked
    /// leaves are added to their accumulated gradient slots.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardStats> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let n = loss.0 + 1;
        let mut reachable = vec![false; n];
        reachable[loss.0] = self.nodes[loss.0].requires_grad;
        for i in (0..n).rev() {
            if !reachable[i] {
                continue;
            }
            for input in self.inputs(i) {
                if self.nodes[input.0].requires_grad {
                    reachable[input.0] = true;
                }
            }
        }

        let mut adj: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut visits = vec![0usize; n];
        let mut stats = BackwardStats {
            reachable: reachable.iter().filter(|&&r| r).count(),
            ..Default::default()
        };
        for i in (0..n).rev() {
            if !reachable[i] {
                continue;
            }
            let Some(dy) = adj[i].take() else { continue };
            visits[i] += 1;
            stats.visited += 1;
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.grads[i] {
                    Some(g) => g.iter_mut().zip(&dy).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(dy),
                }
                continue;
            }
            self.backward_node(i, &dy, &mut adj);
        }
        stats.max_visits_per_node = visits.into_iter().max().unwrap_or(0);
        self.last_stats = stats;
        Ok(stats)
    }

    fn inputs(&self, i: usize) -> Vec<Var> {
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. }
            | Op::Bmm { a, b, .. }
            | Op::Add { a, b }
            | Op::Mul { a, b } => {
                vec![*a, *b]
            }
            Op::Scale { x, .. }
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Softmax { x, .. }
            | Op::PoolAvgMax { x, .. }
            | Op::Reshape(x)
            | Op::Permute { x, .. }
            | Op::SliceLast { x, .. }
            | Op::SelectStep { x, .. }
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::SmoothedCe { probs, .. } => vec![*probs],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::ConcatLast { parts, .. } | Op::StackSteps { parts, .. } => parts.clone(),
        }
    }

    fn take_slot(&self, adj: &mut [Option<Vec<f64>>], v: Var) -> Vec<f64> {
        adj[v.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()])
    }

    fn backward_node(&self, i: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();

        // Runs `f` on the adjoint buffer of `v` when `v` is tracked.
        let with = |adj: &mut [Option<Vec<f64>>], v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if wants(v) {
                let mut g = self.take_slot(adj, v);
                f(&mut g);
                restore(adj, v, g);
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                with(adj, *a, &mut |g| {
                    kernels::matmul_bt_acc(dy, val(*b), g, *m, *n, *k)
                });
                with(adj, *b, &mut |g| {
                    kernels::matmul_at_acc(val(*a), dy, g, *m, *k, *n)
                });
            }
            Op::Bmm {
                a,
                b,
                groups,
                m,
                k,
                n,
                trans_b,
            } => {
                let (ad, bd) = (val(*a), val(*b));
                let (m, k, n) = (*m, *k, *n);
                with(adj, *a, &mut |da| {
                    for g in 0..*groups {
                        let dyg = &dy[g * m * n..(g + 1) * m * n];
                        let bg = &bd[g * k * n..(g + 1) * k * n];
                        let dag = &mut da[g * m * k..(g + 1) * m * k];
                        if *trans_b {
                            kernels::matmul_acc(dyg, bg, dag, m, n, k);
                        } else {
                            kernels::matmul_bt_acc(dyg, bg, dag, m, n, k);
                        }
                    }
                });
                with(adj, *b, &mut |db| {
                    for g in 0..*groups {
                        let dyg = &dy[g * m * n..(g + 1) * m * n];
                        let ag = &ad[g * m * k..(g + 1) * m * k];
                        let dbg = &mut db[g * k * n..(g + 1) * k * n];
                        if *trans_b {
                            kernels::matmul_at_acc(dyg, ag, dbg, m, n, k);
                        } else {
                            kernels::matmul_at_acc(ag, dyg, dbg, m, k, n);
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                with(adj, *a, &mut |g| reduce_add(g, dy));
                with(adj, *b, &mut |g| reduce_add(g, dy));
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (val(*a), val(*b));
                with(adj, *a, &mut |g| reduce_mul(g, dy, bd));
                with(adj, *b, &mut |g| reduce_mul(g, dy, ad));
            }
            Op::Scale { x, c } => {
                with(adj, *x, &mut |g| {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d)
                });
            }
            Op::Relu(x) => {
                let xd = val(*x);
                with(adj, *x, &mut |g| {
                    for ((g, d), &xv) in g.iter_mut().zip(dy).zip(xd) {
                        if xv > 0.0 {
                            *g += d;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                with(adj, *x, &mut |g| {
                    for ((g, d), yv) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * (1.0 - yv * yv);
                    }
                });
            }
            Op::Sigmoid(x) => {
                with(adj, *x, &mut |g| {
                    for ((g, d), yv) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * yv * (1.0 - yv);
                    }
                });
            }
            Op::Softmax { x, inner, axis_len } => {
                let (inner, axis_len) = (*inner, *axis_len);
                with(adj, *x, &mut |g| {
                    if inner == 1 {
                        let rows = g
                            .chunks_exact_mut(axis_len)
                            .zip(dy.chunks_exact(axis_len))
                            .zip(y.chunks_exact(axis_len));
                        for ((gr, dr), yr) in rows {
                            let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                            for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                                *g += y * (d - dot);
                            }
                        }
                        return;
                    }
                    let outer = y.len() / (inner * axis_len);
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |j: usize| (o * axis_len + j) * inner + ii;
                            let dot: f64 = (0..axis_len).map(|j| dy[at(j)] * y[at(j)]).sum();
                            for j in 0..axis_len {
                                g[at(j)] += y[at(j)] * (dy[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let width = self.nodes[gain.0].value.len();
                let gd = val(*gain);
                with(adj, *gain, &mut |g| reduce_mul(g, dy, xhat));
                with(adj, *bias, &mut |g| reduce_add(g, dy));
                with(adj, *x, &mut |g| {
                    let w = width as f64;
                    let mut dxh = vec![0.0; width];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let span = r * width..(r + 1) * width;
                        for ((o, d), gv) in dxh.iter_mut().zip(&dy[span.clone()]).zip(gd) {
                            *o = d * gv;
                        }
                        let xh = &xhat[span];
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..width {
                            g[r * width + j] += rs / w * (w * dxh[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, dims } => {
                let (xd, wd) = (val(*x), val(*w));
                with(adj, *x, &mut |g| {
                    kernels::conv1d_backward(xd, wd, dy, dims, Some(g), None, None)
                });
                with(adj, *w, &mut |g| {
                    kernels::conv1d_backward(xd, wd, dy, dims, None, Some(g), None)
                });
                with(adj, *b, &mut |g| {
                    kernels::conv1d_backward(xd, wd, dy, dims, None, None, Some(g))
                });
            }
            Op::PoolAvgMax {
                x,
                steps,
                width,
                argmax,
            } => {
                let (steps, width) = (*steps, *width);
                with(adj, *x, &mut |g| {
                    let batch = argmax.len() / width;
                    for bi in 0..batch {
                        for h in 0..width {
                            let d_avg = dy[bi * 2 * width + h] / steps as f64;
                            let d_max = dy[bi * 2 * width + width + h];
                            for t in 0..steps {
                                g[(bi * steps + t) * width + h] += d_avg;
                            }
                            g[(bi * steps + argmax[bi * width + h]) * width + h] += d_max;
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                with(adj, *x, &mut |g| {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                });
            }
            Op::Permute { x, axes } => {
                let in_shape = self.nodes[x.0].value.shape();
                with(adj, *x, &mut |g| {
                    kernels::permute_offsets(in_shape, axes, |o, src| g[src] += dy[o])
                });
            }
            Op::ConcatLast { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = dy.len() / total;
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    with(adj, p, &mut |g| {
                        for r in 0..rows {
                            for j in 0..w {
                                g[r * w + j] += dy[r * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceLast {
                x,
                start,
                width,
                in_width,
            } => {
                let (start, width, in_width) = (*start, *width, *in_width);
                with(adj, *x, &mut |g| {
                    for r in 0..dy.len() / width {
                        for j in 0..width {
                            g[r * in_width + start + j] += dy[r * width + j];
                        }
                    }
                });
            }
            Op::SelectStep {
                x,
                step,
                steps,
                width,
            } => {
                let (step, steps, width) = (*step, *steps, *width);
                with(adj, *x, &mut |g| {
                    for b in 0..dy.len() / width {
                        let off = (b * steps + step) * width;
                        for j in 0..width {
                            g[off + j] += dy[b * width + j];
                        }
                    }
                });
            }
            Op::StackSteps { parts, width } => {
                let (steps, width) = (parts.len(), *width);
                let batch = dy.len() / (steps * width);
                for (t, &p) in parts.iter().enumerate() {
                    with(adj, p, &mut |g| {
                        for b in 0..batch {
                            for j in 0..width {
                                g[b * width + j] += dy[(b * steps + t) * width + j];
                            }
                        }
                    });
                }
            }
            Op::Sum(x) => {
                with(adj, *x, &mut |g| g.iter_mut().for_each(|v| *v += dy[0]));
            }
            Op::Mean(x) => {
                with(adj, *x, &mut |g| {
                    let n = g.len() as f64;
                    g.iter_mut().for_each(|v| *v += dy[0] / n);
                });
            }
            Op::SmoothedCe { probs, targets } => {
                let p = val(*probs);
                let batch = self.nodes[probs.0].value.shape()[0] as f64;
                with(adj, *probs, &mut |g| {
                    for ((gv, q), &pv) in g.iter_mut().zip(targets).zip(p) {
                        if pv > LOG_FLOOR {
                            *gv -= dy[0] * q / (batch * pv);
                        }
                    }
                });
            }
        }
    }
}

/// Put an adjoint buffer back, merging with anything written meanwhile.
fn restore(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

/// Accumulate `dy[idx] * factor(idx)` into `g`, summing over broadcast
/// repetitions when `g` is shorter than `dy`.
/// `g += dy`, summing over leading broadcast copies when `g` is smaller.
fn reduce_add(g: &mut [f64], dy: &[f64]) {
    for chunk in dy.chunks_exact(g.len()) {
        g.iter_mut().zip(chunk).for_each(|(g, d)| *g += d);
    }
}

/// `g += dy ⊙ other`, where `other` is either as long as `dy` or broadcast
/// over it, and `g` is either as long as `dy` or reduced over broadcast copies.
fn reduce_mul(g: &mut [f64], dy: &[f64], other: &[f64]) {
    let (n, m) = (g.len(), other.len());
    if n == dy.len() {
        for (gc, dc) in g.chunks_exact_mut(m).zip(dy.chunks_exact(m)) {
            for ((g, d), o) in gc.iter_mut().zip(dc).zip(other) {
                *g += d * o;
            }
        }
    } else {
        for (dc, oc) in dy.chunks_exact(n).zip(other.chunks_exact(n)) {
            for ((g, d), o) in g.iter_mut().zip(dc).zip(oc) {
                *g += d * o;
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
