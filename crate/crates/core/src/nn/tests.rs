use super::*;
use crate::seed;
use crate::tensor::{finite_diff_check, Graph, Tensor};
use rand::Rng as _;

fn random(shape: &[usize], seed_: u64) -> Tensor {
    let mut rng = seed::rng(seed_);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn tiny_hybrid() -> HybridSpec {
    HybridSpec {
        input_dim: 32,
        seq_shape: SeqShape {
            steps: 8,
            channels: 4,
        },
        conv_blocks: vec![
            ConvBlockSpec {
                channels: 3,
                kernel: 3,
                stride: 1,
                residual: false,
            },
            ConvBlockSpec {
                channels: 4,
                kernel: 3,
                stride: 2,
                residual: true,
            },
        ],
        lstm_hidden: 4,
        lstm_layers: 2,
        attention_heads: vec![2, 2],
        dense_sizes: vec![5, 3],
        dropout: 0.3,
        classes: 3,
        layer_norm_eps: 1e-5,
    }
}

#[test]
fn dense_ten_to_three_has_33_parameters() {
    let spec = ModelSpec::Mlp(MlpSpec {
        input_dim: 10,
        hidden: vec![],
        dropout: 0.0,
        classes: 3,
    });
    assert_eq!(count_parameters(&build(&spec, 1).unwrap()), 33);
}

#[test]
fn default_parameter_count_matches_layer_formulas() {
    let h = HybridSpec::enhanced();
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k + cout;
    let lstm = |f: usize, hd: usize| 2 * 4 * (f * hd + hd * hd + hd);
    let lin = |i: usize, o: usize| i * o + o;
    let expected = conv(13, 64, 5)
        + (conv(64, 128, 3) + conv(128, 128, 3) + conv(64, 128, 1))
        + (conv(128, 128, 3) + conv(128, 128, 3))
        + lstm(128, 128)
        + lstm(256, 128)
        + 2 * (4 * lin(256, 256) + 2 * 256)
        + lin(512, 256)
        + lin(256, 128)
        + lin(128, 3);
    let got = count_parameters(&build(&ModelSpec::Hybrid(h), 0).unwrap());
    assert_eq!(got, expected);
    assert_eq!(got, 1_534_467);
    assert!((1_500_000..=2_700_000).contains(&got));
}

#[test]
fn lstm_layer_count_formula() {
    let mut h = tiny_hybrid();
    h.lstm_layers = 1;
    let params = build(&ModelSpec::Hybrid(h), 0).unwrap();
    let n: usize = params
        .iter()
        .filter(|(k, _)| k.starts_with("lstm0"))
        .map(|(_, t)| t.len())
        .sum();
    let (f, hd) = (4, 4);
    assert_eq!(n, 2 * 4 * (f * hd + hd * hd + hd));
}

#[test]
fn heads_must_divide_width() {
    let mut h = HybridSpec::enhanced();
    h.lstm_hidden = 50;
    let err = build(&ModelSpec::Hybrid(h), 0).unwrap_err();
    assert!(err.to_string().contains("16 heads"), "{err}");
}

#[test]
fn invalid_specs_rejected() {
    let mut h = tiny_hybrid();
    h.dense_sizes = vec![5, 4];
    assert!(h.validate().is_err());
    let mut h = tiny_hybrid();
    h.dropout = 1.0;
    assert!(h.validate().is_err());
    let mut h = tiny_hybrid();
    h.seq_shape.steps = 7;
    assert!(h.validate().is_err());
    let mut h = tiny_hybrid();
    h.conv_blocks[0].kernel = 2;
    assert!(h.validate().is_err());
}

#[test]
fn same_seed_same_bytes() {
    let spec = ModelSpec::Hybrid(tiny_hybrid());
    assert_eq!(build(&spec, 9).unwrap(), build(&spec, 9).unwrap());
    assert_ne!(build(&spec, 9).unwrap(), build(&spec, 10).unwrap());
}

#[test]
fn initialization_conventions() {
    let p = build(&ModelSpec::Hybrid(tiny_hybrid()), 3).unwrap();
    let b = p.get("lstm0.fwd.b").unwrap().data();
    assert_eq!(&b[..4], &[0.0; 4]);
    assert_eq!(&b[4..8], &[1.0; 4]);
    assert_eq!(&b[8..], &[0.0; 8]);
    assert!(p
        .get("attn0.ln.gain")
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 1.0));
    assert!(p.get("dense0.b").unwrap().data().iter().all(|&v| v == 0.0));
    let w = p.get("dense0.w").unwrap();
    let bound = 1.0 / (w.shape()[0] as f64).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn residual_block_with_zero_branch_is_identity() {
    let spec = ConvBlockSpec {
        channels: 3,
        kernel: 3,
        stride: 1,
        residual: true,
    };
    let mut g = Graph::new();
    let xt = random(&[2, 3, 5], 1);
    let x = g.constant(xt.clone());
    let z = |g: &mut Graph, s: &[usize]| g.constant(Tensor::zeros(s));
    let p = ConvBlockVars {
        w1: z(&mut g, &[3, 3, 3]),
        b1: z(&mut g, &[3]),
        second: Some((z(&mut g, &[3, 3, 3]), z(&mut g, &[3]))),
        proj: None,
    };
    let y = residual_block(&mut g, x, &spec, &p).unwrap();
    assert_eq!(g.value(y), &xt);
}

#[test]
fn channel_changing_block_projects_shortcut() {
    let spec = ConvBlockSpec {
        channels: 5,
        kernel: 3,
        stride: 2,
        residual: true,
    };
    let mut g = Graph::new();
    let x = g.constant(random(&[2, 3, 7], 1));
    let mut c = |s: &[usize], k| g.constant(random(s, k));
    let p = ConvBlockVars {
        w1: c(&[5, 3, 3], 2),
        b1: c(&[5], 3),
        second: Some((c(&[5, 5, 3], 4), c(&[5], 5))),
        proj: Some((c(&[5, 3, 1], 6), c(&[5], 7))),
    };
    let y = residual_block(&mut g, x, &spec, &p).unwrap();
    assert_eq!(g.shape(y), &[2, 5, 4]);
}

#[test]
fn residual_gradient_includes_identity_path() {
    let spec = ConvBlockSpec {
        channels: 2,
        kernel: 3,
        stride: 1,
        residual: true,
    };
    let params = vec![
        random(&[1, 2, 4], 1),
        random(&[2, 2, 3], 2),
        random(&[2], 3),
        random(&[2, 2, 3], 4),
        random(&[2], 5),
        random(&[1, 2, 4], 6),
    ];
    let rep = finite_diff_check(
        |g, v| {
            let p = ConvBlockVars {
                w1: v[1],
                b1: v[2],
                second: Some((v[3], v[4])),
                proj: None,
            };
            let y = residual_block(g, v[0], &spec, &p)?;
            let y = g.mul(y, v[5])?;
            Ok(g.sum(y))
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-6, "{rep:?}");

    // With a zero branch, d(sum(w ⊙ out))/dx is exactly w.
    let mut g = Graph::new();
    let x = g.param(random(&[1, 2, 4], 1));
    let z = |g: &mut Graph, s: &[usize]| g.constant(Tensor::zeros(s));
    let p = ConvBlockVars {
        w1: z(&mut g, &[2, 2, 3]),
        b1: z(&mut g, &[2]),
        second: Some((z(&mut g, &[2, 2, 3]), z(&mut g, &[2]))),
        proj: None,
    };
    let y = residual_block(&mut g, x, &spec, &p).unwrap();
    let w = g.constant(params[5].clone());
    let y = g.mul(y, w).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), params[5].data());
}

fn lstm_leaves(g: &mut Graph, f: usize, h: usize, seed_: u64, zero: bool) -> LstmVars {
    let mk = |g: &mut Graph, s: &[usize], k: u64| {
        g.constant(if zero { Tensor::zeros(s) } else { random(s, k) })
    };
    LstmVars {
        w: mk(g, &[f, 4 * h], seed_),
        u: mk(g, &[h, 4 * h], seed_ + 1),
        b: mk(g, &[4 * h], seed_ + 2),
    }
}

#[test]
fn zero_lstm_gives_zero_states() {
    let mut g = Graph::new();
    let x = g.constant(random(&[2, 4, 3], 1));
    let p = lstm_leaves(&mut g, 3, 5, 0, true);
    let y = bilstm_forward(&mut g, x, &p, &p, 5).unwrap();
    assert_eq!(g.shape(y), &[2, 4, 10]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn reversing_input_swaps_direction_halves() {
    let (b, t, f, h) = (2, 5, 3, 4);
    let xt = random(&[b, t, f], 1);
    let mut rev = vec![0.0; xt.len()];
    for bi in 0..b {
        for ti in 0..t {
            let src = (bi * t + ti) * f;
            let dst = (bi * t + (t - 1 - ti)) * f;
            rev[dst..dst + f].copy_from_slice(&xt.data()[src..src + f]);
        }
    }
    let mut g = Graph::new();
    let p = lstm_leaves(&mut g, f, h, 10, false);
    let x = g.constant(xt);
    let xr = g.constant(Tensor::new(vec![b, t, f], rev).unwrap());
    let y = bilstm_forward(&mut g, x, &p, &p, h).unwrap();
    let yr = bilstm_forward(&mut g, xr, &p, &p, h).unwrap();
    let (y, yr) = (g.value(y).data(), g.value(yr).data());
    for bi in 0..b {
        for ti in 0..t {
            let a = (bi * t + ti) * 2 * h;
            let m = (bi * t + (t - 1 - ti)) * 2 * h;
            for k in 0..h {
                assert!((y[a + k] - yr[m + h + k]).abs() < 1e-14);
                assert!((y[a + h + k] - yr[m + k]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn micro_lstm_gradients_match_finite_differences() {
    let (t, f, h) = (2, 2, 3);
    let params = vec![
        random(&[1, t, f], 1),
        random(&[f, 4 * h], 2),
        random(&[h, 4 * h], 3),
        random(&[4 * h], 4),
        random(&[f, 4 * h], 5),
        random(&[h, 4 * h], 6),
        random(&[4 * h], 7),
        random(&[1, t, 2 * h], 8),
    ];
    let rep = finite_diff_check(
        |g, v| {
            let fw = LstmVars {
                w: v[1],
                u: v[2],
                b: v[3],
            };
            let bw = LstmVars {
                w: v[4],
                u: v[5],
                b: v[6],
            };
            let y = bilstm_forward(g, v[0], &fw, &bw, h)?;
            let y = g.mul(y, v[7])?;
            Ok(g.sum(y))
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

fn attention_leaves(g: &mut Graph, m: usize, seed_: u64) -> AttentionVars {
    let mut k = seed_;
    let mut r = |g: &mut Graph, s: &[usize]| {
        k += 1;
        g.constant(random(s, k))
    };
    AttentionVars {
        wq: r(g, &[m, m]),
        bq: r(g, &[m]),
        wk: r(g, &[m, m]),
        bk: r(g, &[m]),
        wv: r(g, &[m, m]),
        bv: r(g, &[m]),
        wo: r(g, &[m, m]),
        bo: r(g, &[m]),
        ln_gain: r(g, &[m]),
        ln_bias: r(g, &[m]),
    }
}

#[test]
fn zero_query_gives_uniform_attention() {
    let mut g = Graph::new();
    let x = g.constant(random(&[2, 5, 4], 1));
    let mut p = attention_leaves(&mut g, 4, 10);
    p.wq = g.constant(Tensor::zeros(&[4, 4]));
    p.bq = g.constant(Tensor::zeros(&[4]));
    let mut cap = Vec::new();
    multi_head_attention(&mut g, x, 2, &p, Some(&mut cap)).unwrap();
    assert_eq!(cap[0].shape(), &[4, 5, 5]);
    assert!(cap[0].data().iter().all(|&w| (w - 0.2).abs() < 1e-15));
}

#[test]
fn single_step_attention_returns_value_projection() {
    let m = 4;
    let mut g = Graph::new();
    let xt = random(&[3, 1, m], 1);
    let x = g.constant(xt.clone());
    let mut p = attention_leaves(&mut g, m, 20);
    let mut eye = Tensor::zeros(&[m, m]);
    for i in 0..m {
        eye.data_mut()[i * m + i] = 1.0;
    }
    p.wo = g.constant(eye);
    p.bo = g.constant(Tensor::zeros(&[m]));
    let y = multi_head_attention(&mut g, x, 2, &p, None).unwrap();
    let v = linear(&mut g, x, p.wv, p.bv).unwrap();
    let (y, v) = (g.value(y).data(), g.value(v).data());
    assert!(y.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-14));
}

#[test]
fn attention_rows_are_stochastic() {
    let mut g = Graph::new();
    let x = g.constant(random(&[3, 7, 8], 5));
    let p = attention_leaves(&mut g, 8, 30);
    let mut cap = Vec::new();
    multi_head_attention(&mut g, x, 4, &p, Some(&mut cap)).unwrap();
    for row in cap[0].data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&w| w > 0.0));
    }
    assert!(multi_head_attention(&mut g, x, 3, &p, None).is_err());
}

#[test]
fn forward_rows_are_distributions_and_batch_independent() {
    let model = Model::new(ModelSpec::Hybrid(tiny_hybrid()), 4).unwrap();
    let rows = random(&[6, 32], 8).into_data();
    let p = model.predict_proba(&rows).unwrap();
    assert_eq!(p.len(), 18);
    for r in p.chunks(3) {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.iter().all(|&v| v >= 0.0));
    }
    let perm = [3, 0, 5, 1, 4, 2];
    let permuted: Vec<f64> = perm
        .iter()
        .flat_map(|&i| rows[i * 32..(i + 1) * 32].to_vec())
        .collect();
    let pp = model.predict_proba(&permuted).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        for c in 0..3 {
            assert!((pp[k * 3 + c] - p[i * 3 + c]).abs() < 1e-12);
        }
    }
    assert_eq!(p, model.predict_proba(&rows).unwrap());
    assert!(model.predict_proba(&rows[..31]).is_err());
}

#[test]
fn training_mode_dropout_is_seeded() {
    let model = Model::new(ModelSpec::Hybrid(tiny_hybrid()), 4).unwrap();
    let rows = random(&[4, 32], 8);
    let run = |s: u64| {
        let mut g = Graph::new();
        let p = BoundParams::bind(&mut g, &model.params, true);
        let x = g.constant(rows.clone());
        let mut rng = seed::rng(s);
        let y = forward(&mut g, &model.spec, &p, x, &mut Mode::Train(&mut rng), None).unwrap();
        g.value(y).data().to_vec()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert_ne!(run(1), model.predict_proba(rows.data()).unwrap());
}

#[test]
fn shrunken_model_gradients_match_finite_differences() {
    let model = Model::new(ModelSpec::Hybrid(tiny_hybrid()), 11).unwrap();
    let rows = random(&[3, 32], 12).into_data();
    let rep = model_gradient_check(&model, &rows, &[0, 2, 1], 0.1, 1e-5).unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    assert_eq!(rep.checked + rep.excluded.len(), model.num_parameters());

    let mlp = Model::new(
        ModelSpec::Mlp(MlpSpec {
            input_dim: 6,
            hidden: vec![4],
            dropout: 0.3,
            classes: 3,
        }),
        2,
    )
    .unwrap();
    let rows = random(&[4, 6], 3).into_data();
    let rep = model_gradient_check(&mlp, &rows, &[0, 1, 2, 1], 0.1, 1e-5).unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

#[test]
fn standard_variant_drops_residuals_and_second_attention() {
    let s = HybridSpec::standard_from(&HybridSpec::enhanced());
    assert!(s.conv_blocks.iter().all(|b| !b.residual));
    assert_eq!(s.lstm_layers, 1);
    assert_eq!(s.attention_heads, vec![8]);
    s.validate().unwrap();
}

#[test]
fn fast_profile_is_valid_for_common_widths() {
    for d in [32, 60, 120, 200, 988, 97] {
        let h = HybridSpec::fast(d);
        h.validate().unwrap_or_else(|e| panic!("{d}: {e}"));
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = Model::new(ModelSpec::Hybrid(tiny_hybrid()), 5).unwrap();
    let ck = Checkpoint {
        model,
        seed: 77,
        normalizer: None,
    };
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
    assert_eq!(
        u32::from_le_bytes(buf[8..12].try_into().unwrap()),
        CHECKPOINT_VERSION
    );
    let hlen = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&buf[20..20 + hlen]).unwrap();
    assert_eq!(header["seed"], 77);
    let back = Checkpoint::read_from(&mut buf.as_slice(), "mem".as_ref()).unwrap();
    assert_eq!(back, ck);

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(Checkpoint::read_from(&mut bad.as_slice(), "mem".as_ref()).is_err());
    let short = &buf[..buf.len() - 3];
    assert!(Checkpoint::read_from(&mut &short[..], "mem".as_ref()).is_err());
    let mut long = buf.clone();
    long.push(0);
    assert!(Checkpoint::read_from(&mut long.as_slice(), "mem".as_ref()).is_err());
}
