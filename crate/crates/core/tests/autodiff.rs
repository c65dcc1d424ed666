use neuroaffect::tensor::{audit_primitives, Graph, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_finite_differences() {
    let audit = audit_primitives(100, 1e-5, 2024).unwrap();
    for entry in &audit {
        println!(
            "{:<24} instances={} checked={} excluded={} max_rel_err={:.3e}",
            entry.op, entry.instances, entry.checked, entry.excluded, entry.max_rel_err
        );
    }
    for entry in &audit {
        assert!(entry.checked > 0, "{}", entry.op);
        assert!(entry.max_rel_err < 1e-4, "{entry:?}");
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7,
                                      vals in proptest::collection::vec(-50.0f64..50.0, 35)) {
        let data = vals[..rows * cols].to_vec();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let s = g.softmax(x, 1).unwrap();
        for row in g.value(s).data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0 && p <= 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
