use proptest::prelude::*;
use rcft_tensor::{Graph, Tensor};

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, vals in prop::collection::vec(-1e4f64..1e4, 1..40)) {
        let cols = vals.len().div_ceil(rows);
        let mut data = vals.clone();
        data.resize(rows * cols, 0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[rows, cols], data).unwrap());
        let y = g.softmax(x, 1).unwrap();
        for row in g.value(y).chunks(cols) {
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(vals in prop::collection::vec(-50f64..50.0, 1..10), shift in -100f64..100.0) {
        let n = vals.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[n], vals.clone()).unwrap());
        let xs = g.constant(Tensor::new(&[n], vals.iter().map(|v| v + shift).collect()).unwrap());
        let a = g.softmax(x, 0).unwrap();
        let b = g.softmax(xs, 0).unwrap();
        for (p, q) in g.value(a).iter().zip(g.value(b)) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
