use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so gradients that are zero up to
/// round-off compare on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// One-sided slopes that disagree by more than this (relative to
/// `max(1, |central|)`) mark a nondifferentiable point.
const KINK_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)` over checked entries.
    pub max_rel_err: f64,
    /// Entry with the largest error: (param, element, analytic, numeric).
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// (param, element) pairs skipped because the function has a kink there.
    pub excluded: Vec<(usize, usize)>,
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out)
        .item()
        .ok_or_else(|| Error::shape("finite_diff_check", "function must return a scalar"))
}

/// Compare recorded gradients of the scalar function `f` against central
/// finite differences with step `eps`, for every element of every parameter.
///
/// Elements where the forward and backward one-sided slopes disagree are
/// reported in `excluded` instead of being scored.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let base = g.value(out).item().unwrap_or(f64::NAN);

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; params[pi].len()]);
        for e in 0..params[pi].len() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + eps;
            let up = eval(&f, &work)?;
            work[pi].data_mut()[e] = orig - eps;
            let down = eval(&f, &work)?;
            work[pi].data_mut()[e] = orig;

            let central = (up - down) / (2.0 * eps);
            let fwd = (up - base) / eps;
            let bwd = (base - down) / eps;
            if (fwd - bwd).abs() > KINK_TOL * central.abs().max(1.0) {
                report.excluded.push((pi, e));
                continue;
            }
            let a = analytic[e];
            let err = (a - central).abs() / a.abs().max(central.abs()).max(REL_FLOOR);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((pi, e, a, central));
            }
        }
    }
    Ok(report)
}

/// Aggregate of [`finite_diff_check`] over many random instances of one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub checked: usize,
    pub excluded: usize,
}

type Case = fn(&mut crate::seed::Rng) -> (Vec<Tensor>, Builder);
type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn rand_tensor(shape: &[usize], rng: &mut crate::seed::Rng) -> Tensor {
    use rand::Rng as _;
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn rand_away_from_zero(shape: &[usize], rng: &mut crate::seed::Rng) -> Tensor {
    use rand::Rng as _;
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contract `out` with a fixed random tensor so the objective is a generic
/// linear functional rather than a plain sum.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn dims(rng: &mut crate::seed::Rng, lo: usize, hi: usize) -> usize {
    use rand::Rng as _;
    rng.random_range(lo..=hi)
}

macro_rules! case {
    (|$rng:ident| $inputs:expr, $weights:expr, |$g:ident, $v:ident| $body:expr) => {{
        fn make($rng: &mut crate::seed::Rng) -> (Vec<Tensor>, Builder) {
            let inputs: Vec<Tensor> = $inputs;
            let weights: Tensor = {
                let shape: Vec<usize> = $weights(&inputs);
                rand_tensor(&shape, $rng)
            };
            let build: Builder = Box::new(move |$g: &mut Graph, $v: &[Var]| {
                let out: Var = $body?;
                project($g, out, &weights)
            });
            (inputs, build)
        }
        make as Case
    }};
}

fn cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "matmul",
            case!(
                |rng| {
                    let (m, k, n) = (dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
                    vec![rand_tensor(&[m, k], rng), rand_tensor(&[k, n], rng)]
                },
                |i: &Vec<Tensor>| vec![i[0].shape()[0], i[1].shape()[1]],
                |g, v| g.matmul(v[0], v[1])
            ),
        ),
        (
            "bmm",
            case!(
                |rng| {
                    let (b, m, k, n) = (
                        dims(rng, 1, 3),
                        dims(rng, 1, 4),
                        dims(rng, 1, 4),
                        dims(rng, 1, 4),
                    );
                    vec![rand_tensor(&[b, m, k], rng), rand_tensor(&[b, k, n], rng)]
                },
                |i: &Vec<Tensor>| vec![i[0].shape()[0], i[0].shape()[1], i[1].shape()[2]],
                |g, v| g.bmm(v[0], v[1], false)
            ),
        ),
        (
            "bmm_transposed",
            case!(
                |rng| {
                    let (b, m, k, n) = (
                        dims(rng, 1, 3),
                        dims(rng, 1, 4),
                        dims(rng, 1, 4),
                        dims(rng, 1, 4),
                    );
                    vec![rand_tensor(&[b, m, k], rng), rand_tensor(&[b, n, k], rng)]
                },
                |i: &Vec<Tensor>| vec![i[0].shape()[0], i[0].shape()[1], i[1].shape()[1]],
                |g, v| g.bmm(v[0], v[1], true)
            ),
        ),
        (
            "add_broadcast",
            case!(
                |rng| {
                    let (m, n) = (dims(rng, 1, 4), dims(rng, 1, 4));
                    vec![rand_tensor(&[m, n], rng), rand_tensor(&[n], rng)]
                },
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| g.add(v[0], v[1])
            ),
        ),
        (
            "mul_broadcast",
            case!(
                |rng| {
                    let (b, m, n) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3));
                    vec![rand_tensor(&[m, n], rng), rand_tensor(&[b, m, n], rng)]
                },
                |i: &Vec<Tensor>| i[1].shape().to_vec(),
                |g, v| g.mul(v[0], v[1])
            ),
        ),
        (
            "scale",
            case!(
                |rng| vec![rand_tensor(&[dims(rng, 1, 6)], rng)],
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| Ok::<_, Error>(g.scale(v[0], -1.7))
            ),
        ),
        (
            "relu",
            case!(
                |rng| vec![rand_away_from_zero(&[dims(rng, 1, 8)], rng)],
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| Ok::<_, Error>(g.relu(v[0]))
            ),
        ),
        (
            "tanh",
            case!(
                |rng| vec![rand_tensor(&[dims(rng, 1, 8)], rng)],
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| Ok::<_, Error>(g.tanh(v[0]))
            ),
        ),
        (
            "sigmoid",
            case!(
                |rng| vec![rand_tensor(&[dims(rng, 1, 8)], rng)],
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| Ok::<_, Error>(g.sigmoid(v[0]))
            ),
        ),
        (
            "softmax_last_axis",
            case!(
                |rng| vec![rand_tensor(&[dims(rng, 1, 3), dims(rng, 2, 5)], rng)],
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| g.softmax(v[0], 1)
            ),
        ),
        (
            "softmax_inner_axis",
            case!(
                |rng| vec![rand_tensor(
                    &[dims(rng, 1, 3), dims(rng, 2, 4), dims(rng, 1, 3)],
                    rng
                )],
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| g.softmax(v[0], 1)
            ),
        ),
        (
            "layer_norm",
            case!(
                |rng| {
                    let w = dims(rng, 2, 6);
                    vec![
                        rand_tensor(&[dims(rng, 1, 3), w], rng),
                        rand_tensor(&[w], rng),
                        rand_tensor(&[w], rng),
                    ]
                },
                |i: &Vec<Tensor>| i[0].shape().to_vec(),
                |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)
            ),
        ),
        (
            "conv1d",
            case!(
                |rng| {
                    let (b, cin, cout) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3));
                    let k = dims(rng, 1, 3);
                    let len = dims(rng, k, 7);
                    vec![
                        rand_tensor(&[b, cin, len], rng),
                        rand_tensor(&[cout, cin, k], rng),
                        rand_tensor(&[cout], rng),
                        // stride and padding ride along as a tiny untracked-looking tensor
                        Tensor::vector(vec![dims(rng, 1, 2) as f64, dims(rng, 0, 1) as f64]),
                    ]
                },
                |i: &Vec<Tensor>| {
                    let (stride, pad) = (i[3].data()[0] as usize, i[3].data()[1] as usize);
                    let (len, k) = (i[0].shape()[2], i[1].shape()[2]);
                    vec![
                        i[0].shape()[0],
                        i[1].shape()[0],
                        (len + 2 * pad - k) / stride + 1,
                    ]
                },
                |g, v| {
                    let sp = g.value(v[3]).data().to_vec();
                    g.conv1d(
                        v[0],
                        v[1],
                        v[2],
                        sp[0].round() as usize,
                        sp[1].round() as usize,
                    )
                }
            ),
        ),
        (
            "pool_avg_max",
            case!(
                |rng| vec![rand_tensor(
                    &[dims(rng, 1, 2), dims(rng, 1, 5), dims(rng, 1, 4)],
                    rng
                )],
                |i: &Vec<Tensor>| vec![i[0].shape()[0], 2 * i[0].shape()[2]],
                |g, v| g.pool_avg_max(v[0])
            ),
        ),
        (
            "permute",
            case!(
                |rng| vec![rand_tensor(
                    &[dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)],
                    rng
                )],
                |i: &Vec<Tensor>| vec![i[0].shape()[2], i[0].shape()[0], i[0].shape()[1]],
                |g, v| g.permute(v[0], &[2, 0, 1])
            ),
        ),
        (
            "reshape",
            case!(
                |rng| vec![rand_tensor(&[2, dims(rng, 1, 4)], rng)],
                |i: &Vec<Tensor>| vec![i[0].len()],
                |g, v| {
                    let n = g.value(v[0]).len();
                    g.reshape(v[0], &[n])
                }
            ),
        ),
        (
            "concat_slice",
            case!(
                |rng| {
                    let m = dims(rng, 1, 3);
                    vec![
                        rand_tensor(&[m, dims(rng, 1, 3)], rng),
                        rand_tensor(&[m, dims(rng, 2, 4)], rng),
                    ]
                },
                |i: &Vec<Tensor>| vec![i[0].shape()[0], i[0].shape()[1] + i[1].shape()[1] - 1],
                |g, v| {
                    let c = g.concat_last(&[v[0], v[1]])?;
                    let w = g.shape(c)[1];
                    g.slice_last(c, 1, w - 1)
                }
            ),
        ),
        (
            "select_stack_steps",
            case!(
                |rng| vec![rand_tensor(&[dims(rng, 1, 3), 3, dims(rng, 1, 3)], rng)],
                |i: &Vec<Tensor>| vec![i[0].shape()[0], 2, i[0].shape()[2]],
                |g, v| {
                    let a = g.select_step(v[0], 2)?;
                    let b = g.select_step(v[0], 0)?;
                    g.stack_steps(&[a, b])
                }
            ),
        ),
        (
            "mean",
            case!(
                |rng| vec![rand_tensor(&[dims(rng, 1, 6)], rng)],
                |_: &Vec<Tensor>| vec![],
                |g, v| Ok::<_, Error>(g.mean(v[0]))
            ),
        ),
        (
            "smoothed_cross_entropy",
            case!(
                |rng| vec![rand_tensor(&[dims(rng, 1, 4), 3], rng)],
                |_: &Vec<Tensor>| vec![],
                |g, v| {
                    let p = g.softmax(v[0], 1)?;
                    let b = g.shape(p)[0];
                    let labels: Vec<usize> = (0..b).map(|i| i % 3).collect();
                    g.smoothed_cross_entropy(p, &labels, 0.1)
                }
            ),
        ),
    ]
}

/// Run [`finite_diff_check`] on `instances` random instances of every
/// differentiable primitive.
pub fn audit_primitives(instances: usize, eps: f64, seed: u64) -> Result<Vec<AuditEntry>> {
    let mut out = Vec::new();
    for (op, make) in cases() {
        let mut rng = crate::seed::child_rng(seed, op, 0);
        let mut entry = AuditEntry {
            op,
            instances,
            max_rel_err: 0.0,
            checked: 0,
            excluded: 0,
        };
        for _ in 0..instances {
            let (inputs, build) = make(&mut rng);
            let report = finite_diff_check(|g, v| build(g, v), &inputs, eps)?;
            entry.max_rel_err = entry.max_rel_err.max(report.max_rel_err);
            entry.checked += report.checked;
            entry.excluded += report.excluded.len();
        }
        out.push(entry);
    }
    Ok(out)
}
