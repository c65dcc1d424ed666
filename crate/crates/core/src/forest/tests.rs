use super::*;
use crate::seed;
use proptest::prelude::*;

fn xor(n: usize, seed_: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = seed::rng(seed_);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        rows.extend([a, b]);
        labels.push(usize::from((a > 0.0) != (b > 0.0)));
    }
    (rows, labels)
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

#[test]
fn gini_fixtures() {
    assert_eq!(gini(&[10, 0, 0]), Some(0.0));
    assert_eq!(gini(&[5, 5, 0]), Some(0.5));
    assert!((gini(&[4, 4, 4]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(gini(&[0, 0, 0]), None);
}

#[test]
fn single_class_data_gives_single_leaves() {
    let rows: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let f = fit_forest(
        &rows,
        &[1; 10],
        3,
        &ForestConfig {
            n_trees: 5,
            ..ForestConfig::random_forest(1)
        },
    )
    .unwrap();
    assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    assert_eq!(f.predict_proba(&[3.0, 4.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    assert_eq!(f.impurity_importance(), vec![0.0, 0.0]);
}

#[test]
fn forests_capture_xor() {
    let (tr, ytr) = xor(200, 1);
    let (te, yte) = xor(400, 2);
    for cfg in [ForestConfig::random_forest(3), ForestConfig::extra_trees(3)] {
        let f = fit_forest(&tr, &ytr, 2, &cfg).unwrap();
        let acc = accuracy(&f.predict(&te).unwrap(), &yte);
        assert!(acc > 0.9, "{cfg:?}: {acc}");
    }
}

#[test]
fn fixed_seed_reproduces_structure() {
    let (x, y) = xor(100, 5);
    let cfg = ForestConfig {
        n_trees: 10,
        ..ForestConfig::extra_trees(4)
    };
    assert_eq!(
        fit_forest(&x, &y, 2, &cfg).unwrap(),
        fit_forest(&x, &y, 2, &cfg).unwrap()
    );
    let other = ForestConfig {
        seed: 5,
        ..cfg.clone()
    };
    assert_ne!(
        fit_forest(&x, &y, 2, &cfg).unwrap(),
        fit_forest(&x, &y, 2, &other).unwrap()
    );
}

fn stump(class_probs: Vec<f64>) -> Tree {
    Tree {
        nodes: vec![TreeNode::Leaf {
            probs: class_probs,
            n_samples: 1,
        }],
    }
}

#[test]
fn unanimous_and_tied_votes() {
    let mk = |trees| Forest {
        trees,
        n_features: 1,
        classes: 3,
        config: ForestConfig::default(),
    };
    let f = mk(vec![stump(vec![0.0, 0.0, 1.0]); 4]);
    assert_eq!(f.predict_proba(&[0.0]).unwrap(), vec![0.0, 0.0, 1.0]);
    let mut trees = vec![stump(vec![1.0, 0.0, 0.0]); 50];
    trees.extend(vec![stump(vec![0.0, 1.0, 0.0]); 50]);
    let f = mk(trees);
    assert_eq!(f.predict(&[0.0]).unwrap(), vec![0]);
    assert!(f.predict(&[0.0, 1.0]).unwrap().len() == 2);
}

#[test]
fn separable_training_accuracy() {
    let n = 300;
    let mut rng = seed::rng(7);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let rows: Vec<f64> = labels
        .iter()
        .flat_map(|&y| {
            let mut r: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            r[2] += 5.0 * y as f64;
            r
        })
        .collect();
    let f = fit_forest(&rows, &labels, 3, &ForestConfig::random_forest(1)).unwrap();
    assert!(accuracy(&f.predict(&rows).unwrap(), &labels) >= 0.99);
    let imp = f.impurity_importance();
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(imp[2] > 0.8, "{imp:?}");
}

fn brute_force_stump(x: &[f64], y: &[usize]) -> f64 {
    // Exhaustive search over all midpoints for the lowest weighted Gini.
    let mut vals: Vec<f64> = x.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let mut best = (f64::INFINITY, f64::NAN);
    for w in vals.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        let mut l = [0usize; 2];
        let mut r = [0usize; 2];
        for (v, &c) in x.iter().zip(y) {
            if *v <= t {
                l[c] += 1
            } else {
                r[c] += 1
            }
        }
        let (nl, nr) = (
            l.iter().sum::<usize>() as f64,
            r.iter().sum::<usize>() as f64,
        );
        let w = (nl * gini(&l).unwrap() + nr * gini(&r).unwrap()) / (nl + nr);
        if w < best.0 {
            best = (w, t);
        }
    }
    best.1
}

#[test]
fn depth_one_tree_recovers_threshold() {
    let mut rng = seed::rng(3);
    let x: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..10.0)).collect();
    let y: Vec<usize> = x.iter().map(|&v| usize::from(v > 6.3)).collect();
    let cfg = ForestConfig {
        n_trees: 1,
        bootstrap: false,
        max_depth: Some(1),
        ..ForestConfig::random_forest(0)
    };
    let f = fit_forest(&x, &y, 2, &cfg).unwrap();
    let TreeNode::Split { threshold, .. } = f.trees[0].nodes[0] else {
        panic!("root should split");
    };
    assert_eq!(threshold, brute_force_stump(&x, &y));
    let below = x
        .iter()
        .copied()
        .filter(|&v| v <= 6.3)
        .fold(f64::MIN, f64::max);
    let above = x
        .iter()
        .copied()
        .filter(|&v| v > 6.3)
        .fold(f64::MAX, f64::min);
    assert!(threshold > below && threshold < above);
}

#[test]
fn rf_and_et_coincide_without_randomness() {
    let (x, y) = xor(80, 9);
    let base = ForestConfig {
        n_trees: 3,
        bootstrap: false,
        randomized_threshold: false,
        ..ForestConfig::random_forest(2)
    };
    let et = ForestConfig {
        bootstrap: false,
        randomized_threshold: false,
        ..ForestConfig {
            n_trees: 3,
            ..ForestConfig::extra_trees(2)
        }
    };
    assert_eq!(
        fit_forest(&x, &y, 2, &base).unwrap().trees,
        fit_forest(&x, &y, 2, &et).unwrap().trees
    );
}

#[test]
fn noise_importance_is_spread() {
    let d = 16;
    let n = 300;
    let mut mean = vec![0.0; d];
    for s in 0..10 {
        let mut rng = seed::rng(100 + s);
        let rows: Vec<f64> = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let cfg = ForestConfig {
            n_trees: 20,
            ..ForestConfig::random_forest(s)
        };
        let imp = fit_forest(&rows, &labels, 3, &cfg)
            .unwrap()
            .impurity_importance();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        mean.iter_mut().zip(&imp).for_each(|(m, v)| *m += v / 10.0);
    }
    let ceiling = 3.0 / (d as f64).sqrt();
    assert!(mean.iter().all(|&v| v < ceiling), "{mean:?}");
}

#[test]
fn rejects_bad_input() {
    assert!(fit_forest(&[], &[], 3, &ForestConfig::default()).is_err());
    assert!(fit_forest(&[1.0, 2.0, 3.0], &[0, 1], 3, &ForestConfig::default()).is_err());
    assert!(fit_forest(&[1.0, 2.0], &[0, 3], 3, &ForestConfig::default()).is_err());
    let f = fit_forest(
        &[1.0, 2.0, 3.0, 4.0],
        &[0, 1],
        3,
        &ForestConfig {
            n_trees: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(f.predict(&[1.0, 2.0, 3.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn splits_decrease_impurity_and_probs_sum_to_one(seed_ in 0u64..1000, n in 10usize..60) {
        let mut rng = seed::rng(seed_);
        let rows: Vec<f64> = (0..n * 3).map(|_| rng.random_range(0..5) as f64).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        for cfg in [ForestConfig::random_forest(seed_), ForestConfig::extra_trees(seed_)] {
            let f = fit_forest(&rows, &labels, 3, &ForestConfig { n_trees: 5, ..cfg }).unwrap();
            for t in &f.trees {
                for node in &t.nodes {
                    match node {
                        TreeNode::Split { impurity_decrease, threshold, .. } => {
                            prop_assert!(*impurity_decrease > 0.0);
                            prop_assert!(threshold.is_finite());
                        }
                        TreeNode::Leaf { probs, n_samples } => {
                            prop_assert!(*n_samples > 0);
                            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                        }
                    }
                }
            }
            for p in f.predict_proba(&rows).unwrap().chunks(3) {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
