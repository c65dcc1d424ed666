//! Raw row-major kernels shared by forward and backward rules. All of them
//! accumulate into `out` (`out += ...`).

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[derive(Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub len: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub lout: usize,
}

impl ConvDims {
    /// Output positions `t0..t1` whose tap `kk` reads inside the unpadded
    /// signal, and the input position read at `t0`.
    #[inline]
    fn span(&self, kk: usize) -> (usize, usize, usize) {
        let s = self.stride;
        let t0 = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(s)
        };
        let reach = self.len + self.pad;
        let t1 = if reach <= kk {
            0
        } else {
            ((reach - kk - 1) / s + 1).min(self.lout)
        };
        if t0 >= t1 {
            return (0, 0, 0);
        }
        (t0, t1, t0 * s + kk - self.pad)
    }
}

/// Cross-correlation forward: `y[b,co,t] = bias[co] + Σ_ci Σ_k w[co,ci,k] · x[b,ci,t·s+k−p]`.
pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.cout * d.lout];
    let spans: Vec<_> = (0..d.k).map(|kk| d.span(kk)).collect();
    for b in 0..d.batch {
        for co in 0..d.cout {
            let yrow = &mut y[(b * d.cout + co) * d.lout..(b * d.cout + co + 1) * d.lout];
            yrow.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..d.cin {
                let xrow = &x[(b * d.cin + ci) * d.len..(b * d.cin + ci + 1) * d.len];
                for (kk, &(t0, t1, s0)) in spans.iter().enumerate() {
                    let wv = w[(co * d.cin + ci) * d.k + kk];
                    let xs = xrow[s0..].iter().step_by(d.stride);
                    for (yv, &xv) in yrow[t0..t1].iter_mut().zip(xs) {
                        *yv += wv * xv;
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d: &ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let spans: Vec<_> = (0..d.k).map(|kk| d.span(kk)).collect();
    for b in 0..d.batch {
        for co in 0..d.cout {
            let dyrow = &dy[(b * d.cout + co) * d.lout..(b * d.cout + co + 1) * d.lout];
            if let Some(db) = db.as_deref_mut() {
                db[co] += dyrow.iter().sum::<f64>();
            }
            for ci in 0..d.cin {
                let xoff = (b * d.cin + ci) * d.len;
                for (kk, &(t0, t1, s0)) in spans.iter().enumerate() {
                    let widx = (co * d.cin + ci) * d.k + kk;
                    let g = &dyrow[t0..t1];
                    if let Some(dw) = dw.as_deref_mut() {
                        let xs = x[xoff + s0..xoff + d.len].iter().step_by(d.stride);
                        dw[widx] += g.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[widx];
                        let xs = dx[xoff + s0..xoff + d.len].iter_mut().step_by(d.stride);
                        for (o, &gv) in xs.zip(g) {
                            *o += gv * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Visit every element of a permuted view, yielding (output offset, input offset).
pub(crate) fn permute_offsets(in_shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = in_shape.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for out in 0..total {
        f(out, src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        matmul_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // bᵀ stored as 2x3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c2 = [0.0; 4];
        matmul_bt_acc(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);
        // aᵀ stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = [0.0; 4];
        matmul_at_acc(&at, &b, &mut c3, 3, 2, 2);
        assert_eq!(c, c3);
    }

    #[test]
    fn permute_transposes() {
        let mut out = vec![0.0; 6];
        let input = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        permute_offsets(&[2, 3], &[1, 0], |o, i| out[o] = input[i]);
        assert_eq!(out, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }
}
