//! Property tests for numeric invariants of the tape operations.

use lexret_autodiff::Tape;
use proptest::prelude::*;

proptest! {
    // Stabilized softmax keeps its normalization even at large magnitudes.
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..8, seedmag in 0f64..1000.0) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| ((i as f64 * 0.7129).sin()) * seedmag)
            .collect();
        let mut tape = Tape::new();
        let x = tape.constant(vec![rows, cols], data);
        let s = tape.softmax(x).unwrap();
        let v = tape.value(s);
        for r in 0..rows {
            let sum: f64 = v[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "row {} sums to {}", r, sum);
            prop_assert!(v[r * cols..(r + 1) * cols].iter().all(|p| *p >= 0.0));
        }
    }

    // Finite inputs stay finite through the unary op chain.
    #[test]
    fn unary_chain_preserves_finiteness(vals in prop::collection::vec(-1e3f64..1e3, 1..32)) {
        let n = vals.len();
        let mut tape = Tape::new();
        let x = tape.constant(vec![n], vals);
        let r = tape.relu(x);
        let l = tape.log1p(r);
        let g = tape.gelu(l);
        let s = tape.softmax(g).unwrap();
        prop_assert!(tape.value(s).iter().all(|v| v.is_finite()));
    }

    // L1 normalization of a positive vector is a distribution.
    #[test]
    fn l1_normalize_yields_distribution(vals in prop::collection::vec(1e-6f64..100.0, 1..24)) {
        let n = vals.len();
        let mut tape = Tape::new();
        let x = tape.constant(vec![n], vals);
        let y = tape.l1_normalize(x).unwrap();
        let sum: f64 = tape.value(y).iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }
}
