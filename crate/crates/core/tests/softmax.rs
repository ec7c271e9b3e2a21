//! Softmax and cross-entropy properties.

use glyphnet::layers::softmax::{cross_entropy, softmax, softmax_cross_entropy};
use glyphnet::Tensor;
use proptest::prelude::*;

fn logits() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 2usize..12).prop_flat_map(|(n, k)| (Just(n), Just(k), prop::collection::vec(-30.0f64..30.0, n * k)))
}

proptest! {
    #[test]
    fn rows_sum_to_one((n, k, z) in logits()) {
        let p = softmax(&Tensor::new(vec![n, k], z).unwrap()).unwrap();
        for row in p.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn shift_invariant((n, k, z) in logits(), c in -100.0f64..100.0) {
        let a = softmax(&Tensor::new(vec![n, k], z.clone()).unwrap()).unwrap();
        let b = softmax(&Tensor::new(vec![n, k], z.iter().map(|v| v + c).collect()).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn fused_gradient_is_p_minus_y_over_n((n, k, z) in logits(), seed in 0usize..1000) {
        let labels: Vec<usize> = (0..n).map(|i| (seed + 7 * i) % k).collect();
        let out = softmax_cross_entropy(&Tensor::new(vec![n, k], z).unwrap(), &labels).unwrap();
        for (i, row) in out.grad_logits.data().chunks(k).enumerate() {
            for (j, g) in row.iter().enumerate() {
                let y = if j == labels[i] { 1.0 } else { 0.0 };
                let expect = (out.probs.data()[i * k + j] - y) / n as f64;
                prop_assert!((g - expect).abs() <= 1e-10);
            }
        }
        prop_assert!(out.loss.is_finite() && out.loss >= 0.0);
    }

    #[test]
    fn fused_loss_matches_two_step((n, k, z) in (1usize..4, 2usize..8).prop_flat_map(|(n, k)| (Just(n), Just(k), prop::collection::vec(-5.0f64..5.0, n * k)))) {
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let t = Tensor::new(vec![n, k], z).unwrap();
        let fused = softmax_cross_entropy(&t, &labels).unwrap().loss;
        let chained = cross_entropy(&softmax(&t).unwrap(), &labels).unwrap();
        prop_assert!((fused - chained).abs() <= 1e-12);
    }
}

#[test]
fn uniform_loss_is_ln_10() {
    for n in [1, 3, 32] {
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let out = softmax_cross_entropy(&Tensor::zeros(&[n, 10]), &labels).unwrap();
        assert!((out.loss - 10f64.ln()).abs() <= 1e-12);
        let probs = Tensor::full(&[n, 10], 0.1);
        assert!((cross_entropy(&probs, &labels).unwrap() - 10f64.ln()).abs() <= 1e-12);
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let t = Tensor::new(vec![1, 3], vec![1000.0, -1000.0, 0.0]).unwrap();
    let out = softmax_cross_entropy(&t, &[1]).unwrap();
    assert!((out.loss - 2000.0).abs() < 1e-9);
}
