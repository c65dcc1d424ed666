//! Acceptance checks. Prints one PASS / FAIL / SKIP line per criterion and
//! exits nonzero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use neuroaffect::data::{synth_generate, Category, FeatureTable, SynthConfig};
use neuroaffect::experiments::{run_ablation, run_single, ExperimentConfig, ModelKind};
use neuroaffect::forest::{fit_forest, ForestConfig};
use neuroaffect::importance::{shapley_mc, ShapleyConfig};
use neuroaffect::nn::{
    model_gradient_check, ConvBlockSpec, HybridSpec, MlpSpec, Model, ModelSpec, SeqShape,
};
use neuroaffect::seed;
use neuroaffect::stats::{bonferroni, friedman, metrics, wilcoxon_signed_rank, ConfusionMatrix};
use neuroaffect::tensor::audit_primitives;
use neuroaffect::train::{clip_gradients, cosine_lr, label_smoothed_ce};
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let audit = match audit_primitives(100, 1e-5, 2024) {
        Ok(a) => a,
        Err(e) => return Fail(e.to_string()),
    };
    let worst_op = audit
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .unwrap();
    let unchecked: Vec<&str> = audit
        .iter()
        .filter(|e| e.checked == 0)
        .map(|e| e.op)
        .collect();

    let hybrid = HybridSpec {
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
    };
    let mlp = MlpSpec {
        input_dim: 6,
        hidden: vec![5, 4],
        dropout: 0.3,
        classes: 3,
    };
    let mut model_err: f64 = 0.0;
    for s in 0..3u64 {
        for spec in [
            ModelSpec::Hybrid(hybrid.clone()),
            ModelSpec::Mlp(mlp.clone()),
        ] {
            let model = Model::new(spec, s).unwrap();
            let d = model.spec.input_dim();
            let mut rng = seed::child_rng(s, "gradcheck_rows", 0);
            let rows: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            match model_gradient_check(&model, &rows, &[0, 2, 1], 0.1, 1e-5) {
                Ok(r) => model_err = model_err.max(r.max_rel_err),
                Err(e) => return Fail(e.to_string()),
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst_op.max_rel_err < 1e-4 && model_err < 1e-4 && unchecked.is_empty() && secs < 120.0,
        format!(
            "{} primitives x 100 instances, worst {} rel err {:.2e}; shrunken models rel err {:.2e}; {:.1}s",
            audit.len(),
            worst_op.op,
            worst_op.max_rel_err,
            model_err,
            secs
        ),
    )
}

fn schedule() -> Outcome {
    let cases = [(1e-3, 1e-6, 100.0), (0.1, 0.0, 40.0), (3e-4, 1e-5, 50.0)];
    let ok = cases.iter().all(|&(max, min, t)| {
        cosine_lr(0.0, t, max, min) == max
            && cosine_lr(t / 2.0, t, max, min) == (max + min) / 2.0
            && cosine_lr(t, t, max, min) == min
    });
    verdict(
        ok,
        format!(
            "{} (eta_max, eta_min, T) cases exact at T_cur = 0, T/2, T",
            cases.len()
        ),
    )
}

fn loss_fixtures() -> Outcome {
    let third = 1.0 / 3.0;
    let ce = label_smoothed_ce(&[third; 6], 3, &[0, 2], 0.0).unwrap();
    let mut g = vec![vec![3.0, 4.0]];
    clip_gradients(&mut g, 1.0);
    let err = (ce - 3f64.ln()).abs();
    verdict(
        err < 1e-12 && g[0] == [0.6, 0.8],
        format!("uniform CE - ln 3 = {err:.1e}; clip([3,4], 1) = {:?}", g[0]),
    )
}

fn synth(n_per_class: usize, dims: usize, seed_: u64) -> FeatureTable {
    synth_generate(&SynthConfig {
        n_per_class,
        dims,
        planted: Category::Covariance,
        separation: 5.0,
        seed: seed_,
    })
    .unwrap()
    .0
}

fn synthetic_end_to_end() -> Outcome {
    let t = Instant::now();
    let table = synth(300, 120, 1);
    let cfg = ExperimentConfig {
        seed: 7,
        fast: true,
        fast_epochs: 50,
        ..ExperimentConfig::default()
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for (kind, floor) in [
        (ModelKind::Enhanced, 0.95),
        (ModelKind::Rf, 0.90),
        (ModelKind::Mlp, 0.90),
    ] {
        let start = Instant::now();
        match run_single(&table, kind, &cfg) {
            Ok((s, _)) => {
                let epochs = s.trace.as_ref().map_or(0, |t| t.epochs.len());
                ok &= s.test_acc >= floor && epochs <= 50;
                parts.push(format!(
                    "{kind} {:.4} (>= {floor}{}, {:.0}s)",
                    s.test_acc,
                    if epochs > 0 {
                        format!(", {epochs} epochs")
                    } else {
                        String::new()
                    },
                    start.elapsed().as_secs_f64()
                ));
            }
            Err(e) => return Fail(format!("{kind}: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 900.0;
    verdict(ok, format!("{}; total {secs:.0}s", parts.join(", ")))
}

fn ablation_ordering() -> Outcome {
    let (table, map) = synth_generate(&SynthConfig {
        n_per_class: 150,
        dims: 60,
        planted: Category::Covariance,
        separation: 5.0,
        seed: 2,
    })
    .unwrap();
    let cfg = ExperimentConfig {
        seed: 5,
        fast: true,
        ablation_runs: 3,
        ablation_model: ModelKind::Enhanced,
        ..ExperimentConfig::default()
    };
    let t = Instant::now();
    let a = match run_ablation(&table, &map, &cfg) {
        Ok(a) => a,
        Err(e) => return Fail(e.to_string()),
    };
    let largest = a
        .rows
        .iter()
        .max_by(|x, y| x.drop.total_cmp(&y.drop))
        .unwrap();
    let noise_max = a
        .rows
        .iter()
        .filter(|r| r.removed != Category::Covariance)
        .map(|r| r.drop.abs())
        .fold(0.0, f64::max);
    let rows: Vec<String> = a
        .rows
        .iter()
        .map(|r| format!("{} {:+.2}", r.removed, 100.0 * r.drop))
        .collect();
    verdict(
        largest.removed == Category::Covariance && noise_max < 0.03,
        format!(
            "{} x {} runs, full {:.2}%, drops [{}] pts, max noise |drop| {:.2} pts, {:.0}s",
            a.model,
            a.runs,
            100.0 * a.full_accuracy,
            rows.join(", "),
            100.0 * noise_max,
            t.elapsed().as_secs_f64()
        ),
    )
}

/// Rank of `x[i]` among `x` (1 = largest), ties averaged, by counting.
fn brute_rank(x: &[f64], i: usize) -> f64 {
    let greater = x.iter().filter(|&&v| v > x[i]).count() as f64;
    let equal = x.iter().filter(|&&v| v == x[i]).count() as f64;
    greater + (equal + 1.0) / 2.0
}

fn brute_friedman(scores: &[Vec<f64>]) -> f64 {
    let (m, k) = (scores.len(), scores[0].len());
    let mut rank_sums = vec![0.0; m];
    for f in 0..k {
        let col: Vec<f64> = scores.iter().map(|s| s[f]).collect();
        for (i, r) in rank_sums.iter_mut().enumerate() {
            *r += brute_rank(&col, i);
        }
    }
    let (mf, kf) = (m as f64, k as f64);
    12.0 / (kf * mf * (mf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>()
        - 3.0 * kf * (mf + 1.0)
}

/// Two-sided p of `min(W+, W-)` by enumerating all 2^n sign assignments.
fn brute_wilcoxon(d: &[f64]) -> (f64, f64) {
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = (0..n)
        .map(|i| {
            let below = abs.iter().filter(|&&v| v < abs[i]).count() as f64;
            let equal = abs.iter().filter(|&&v| v == abs[i]).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let w = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u64..1 << n {
        let s: f64 = (0..n)
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if s.min(total - s) <= w + 1e-9 {
            hits += 1;
        }
    }
    (w, hits as f64 / (1u64 << n) as f64)
}

fn statistics() -> Outcome {
    let mut rng = seed::child_rng(11, "acceptance_stats", 0);
    let mut friedman_err: f64 = 0.0;
    for i in 0..20 {
        let m = 2 + i % 5;
        let k = 3 + i % 8;
        let scores: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..k)
                    .map(|_| (rng.random_range(80..100) as f64) / 100.0)
                    .collect()
            })
            .collect();
        let r = friedman(&scores).unwrap();
        friedman_err = friedman_err.max((r.statistic - brute_friedman(&scores)).abs());
    }
    let mut wilcoxon_err: f64 = 0.0;
    let mut fixtures = 0;
    for n in 1..=12 {
        for _ in 0..4 {
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    let v = rng.random_range(1..8) as f64 / 4.0;
                    if rng.random_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let zeros = vec![0.0; n];
            let r = wilcoxon_signed_rank(&d, &zeros).unwrap();
            let (w, p) = brute_wilcoxon(&d);
            wilcoxon_err = wilcoxon_err
                .max((r.p_value - p).abs())
                .max((r.statistic - w).abs());
            fixtures += 1;
        }
    }
    let p = [0.001, 0.004, 0.02, 0.3, 0.5];
    let adj = bonferroni(&p, 10);
    let bonf_ok = adj == [0.01, 0.04, 0.2, 1.0, 1.0];
    verdict(
        friedman_err < 1e-9 && wilcoxon_err < 1e-12 && bonf_ok,
        format!(
            "Friedman max |diff| {friedman_err:.1e} on 20 fixtures; Wilcoxon max |diff| {wilcoxon_err:.1e} on {fixtures} fixtures (n <= 12); Bonferroni {}",
            if bonf_ok { "exact" } else { "WRONG" }
        ),
    )
}

fn exact_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &[f64]) -> Vec<f64> {
    let d = x.len();
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let vals: Vec<f64> = (0..1usize << d)
        .map(|mask| {
            let z: Vec<f64> = (0..d)
                .map(|j| if mask >> j & 1 == 1 { x[j] } else { bg[j] })
                .collect();
            f(&z)
        })
        .collect();
    (0..d)
        .map(|i| {
            (0..1usize << d)
                .filter(|m| m >> i & 1 == 0)
                .map(|m| {
                    let s = m.count_ones() as usize;
                    fact(s) * fact(d - s - 1) / fact(d) * (vals[m | 1 << i] - vals[m])
                })
                .sum()
        })
        .collect()
}

fn shapley_oracle() -> Outcome {
    let mut rng = seed::child_rng(13, "acceptance_shapley", 0);
    let mut mae_worst: f64 = 0.0;
    let mut residual_ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut cases = 0;
    for d in [4usize, 6, 8] {
        let n = 240;
        let rows: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = rows
            .chunks(d)
            .map(|r| {
                let s = r[0] + 0.5 * r[1] * r[2];
                if s < -0.3 {
                    0
                } else if s < 0.3 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let forest = fit_forest(
            &rows,
            &labels,
            3,
            &ForestConfig {
                n_trees: 25,
                max_depth: Some(6),
                ..ForestConfig::random_forest(d as u64)
            },
        )
        .unwrap();
        let bg: Vec<f64> = (0..d)
            .map(|j| rows.iter().skip(j).step_by(d).sum::<f64>() / n as f64)
            .collect();
        for s in 0..3 {
            let x = &rows[s * d..(s + 1) * d];
            let predict = |r: &[f64]| forest.predict_proba(r);
            let cfg = ShapleyConfig {
                n_permutations: 2000,
                antithetic: true,
                seed: (d * 10 + s) as u64,
            };
            let rep = shapley_mc(&predict, 3, x, &bg, None, &cfg).unwrap();
            let c = rep.target_class;
            let f = |z: &[f64]| forest.predict_proba(z).unwrap()[c];
            let exact = exact_shapley(&f, x, &bg);
            let mae = exact
                .iter()
                .zip(&rep.phi)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / d as f64;
            mae_worst = mae_worst.max(mae);
            let se = rep.total_std_error();
            residual_ok &=
                rep.efficiency_residual.abs() < 3.0 * se || rep.efficiency_residual.abs() < 1e-12;
            if se > 0.0 {
                worst_ratio = worst_ratio.max(rep.efficiency_residual.abs() / se);
            }
            cases += 1;
        }
    }
    verdict(
        mae_worst < 0.01 && residual_ok,
        format!(
            "{cases} forest explanations (D = 4, 6, 8; 2000 permutations): worst MAE {mae_worst:.4}, worst |residual|/SE {worst_ratio:.1e}"
        ),
    )
}

fn metric_identities() -> Outcome {
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let diag = metrics(&ConfusionMatrix::from_predictions(&labels, &labels, 3).unwrap()).unwrap();
    let diag_ok = [
        diag.accuracy,
        diag.macro_precision,
        diag.macro_recall,
        diag.macro_f1,
        diag.weighted_precision,
        diag.weighted_recall,
        diag.weighted_f1,
    ]
    .iter()
    .all(|&v| v == 1.0);

    // Per class: 8 of 10 right, 2 errors spread so every column also sums to 10.
    let cm = ConfusionMatrix {
        counts: vec![vec![8, 1, 1], vec![1, 8, 1], vec![1, 1, 8]],
    };
    let m = metrics(&cm).unwrap();
    let f1_ok = m
        .per_class
        .iter()
        .all(|c| (c.precision - 0.8).abs() < 1e-12 && (c.f1 - 0.8).abs() < 1e-12);
    let eq_ok = (m.macro_f1 - m.weighted_f1).abs() < 1e-12
        && (m.macro_precision - m.weighted_precision).abs() < 1e-12
        && (m.macro_recall - m.weighted_recall).abs() < 1e-12;

    let uneven = ConfusionMatrix {
        counts: vec![vec![9, 1, 0], vec![2, 6, 2], vec![0, 3, 7]],
    };
    let u = metrics(&uneven).unwrap();
    let uneven_eq = (u.macro_f1 - u.weighted_f1).abs() < 1e-12;
    verdict(
        diag_ok && f1_ok && eq_ok && uneven_eq,
        format!("diagonal all 1: {diag_ok}; P=R=0.8 gives F1=0.8: {f1_ok}; macro = weighted at equal supports: {eq_ok}"),
    )
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_neuroaffect"));
    c.env_remove("NEUROAFFECT_DATA_DIR").env("RUST_LOG", "warn");
    c
}

fn cli(args: &[String]) -> Result<Vec<u8>, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn run_commands(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let csv = root.join("data.csv");
    let cfg = root.join("cfg.toml");
    fs::write(&cfg, "fast_epochs = 4\nfolds = 3\nn_trees = 30\nbootstrap_resamples = 200\nablation_runs = 2\nshap_samples = 5\nshap_permutations = 10\n").unwrap();
    let mut outputs = Vec::new();
    let argv = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    outputs.push((
        "synth".to_string(),
        cli(&argv(&[
            "synth",
            "--n-per-class",
            "40",
            "--dims",
            "24",
            "--seed",
            "8",
            "--out",
            &s(&csv),
        ]))?,
    ));
    let common = |out: &str| {
        argv(&[
            "--seed",
            "8",
            "--fast",
            "--config",
            &s(&cfg),
            "--data",
            &s(&csv),
            "--out-dir",
            &s(&root.join(out)),
        ])
    };
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "train",
            [argv(&["train", "--model", "enhanced"]), common("train")].concat(),
        ),
        (
            "train_rf",
            [argv(&["train", "--model", "rf"]), common("train_rf")].concat(),
        ),
        (
            "compare",
            [
                argv(&["compare", "--models", "rf,et,mlp,standard,enhanced"]),
                common("compare"),
            ]
            .concat(),
        ),
        (
            "ablate",
            [argv(&["ablate", "--model", "mlp"]), common("ablate")].concat(),
        ),
        (
            "explain",
            [
                argv(&["explain", "--model", "rf", "--top-k", "15"]),
                common("explain"),
            ]
            .concat(),
        ),
    ];
    for (name, args) in commands {
        outputs.push((name.to_string(), cli(&args)?));
        for (f, bytes) in dir_bytes(&root.join(name)) {
            outputs.push((format!("{name}/{f}"), bytes));
        }
    }
    outputs.push((
        "report".to_string(),
        cli(&argv(&["report", &s(&root.join("compare"))]))?,
    ));
    for (f, bytes) in dir_bytes(root)
        .into_iter()
        .filter(|(f, _)| f.ends_with(".csv") || f.ends_with(".json"))
    {
        outputs.push((f, bytes));
    }
    Ok(outputs)
}

fn determinism() -> Outcome {
    let t = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = match (run_commands(a.path()), run_commands(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Fail(e),
    };
    let normalize = |bytes: &[u8], root: &Path| {
        String::from_utf8_lossy(bytes)
            .replace(&root.to_string_lossy().into_owned(), "<root>")
            .into_bytes()
    };
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|((na, ba), (nb, bb))| {
            na != nb || normalize(ba, a.path()) != normalize(bb, b.path())
        })
        .map(|((n, _), _)| n.as_str())
        .collect();
    let same_count = ra.len() == rb.len();
    verdict(
        differing.is_empty() && same_count,
        format!(
            "synth, train (enhanced, rf), compare, ablate, explain, report run twice: {} outputs, {} differ{}; {:.0}s",
            ra.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) },
            t.elapsed().as_secs_f64()
        ),
    )
}

fn real_dataset() -> Outcome {
    let Some(root) = std::env::var_os("NEUROAFFECT_DATA_DIR").map(PathBuf::from) else {
        return Skip("NEUROAFFECT_DATA_DIR not set".into());
    };
    let path = root.join("emotions.csv");
    if !path.exists() {
        return Skip(format!("{} not found", path.display()));
    }
    let table = match FeatureTable::load_csv(&path) {
        Ok(t) => t,
        Err(e) => return Fail(e.to_string()),
    };
    let cfg = ExperimentConfig {
        seed: 42,
        ..ExperimentConfig::default()
    };
    let rf = match run_single(&table, ModelKind::Rf, &cfg) {
        Ok((s, _)) => s.test_acc,
        Err(e) => return Fail(format!("rf: {e}")),
    };
    let enh = match run_single(&table, ModelKind::Enhanced, &cfg) {
        Ok((s, _)) => s.test_acc,
        Err(e) => return Fail(format!("enhanced: {e}")),
    };
    verdict(
        rf >= 0.92 && enh >= 0.95,
        format!(
            "{} rows x {} features: RF {:.4} (>= 0.92), enhanced {:.4} (>= 0.95)",
            table.n_rows(),
            table.n_features(),
            rf,
            enh
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture` or a filter; a
    // filter restricts which criteria run.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradients),
        ("schedule exactness", schedule),
        ("loss fixtures", loss_fixtures),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("ablation ordering", ablation_ordering),
        ("statistics oracles", statistics),
        ("shapley oracle", shapley_oracle),
        ("metric identities", metric_identities),
        ("determinism", determinism),
        ("real-dataset sanity", real_dataset),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let line = match check() {
            Pass(d) => format!("PASS  {name}: {d}"),
            Fail(d) => {
                failed += 1;
                format!("FAIL  {name}: {d}")
            }
            Skip(d) => format!("SKIP  {name}: {d}"),
        };
        println!("{line}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
