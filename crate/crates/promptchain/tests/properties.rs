//! Property tests for the numeric invariants.

use proptest::prelude::*;

use promptchain::graph::{softmax, Graph};
use promptchain::metrics::harmonic_mean;
use promptchain::prompt_chain::{chain_embeddings, unrolled_weights};

fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1000.0..1000.0f64, 2..8)
}

fn vector_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim..=dim)
        .prop_filter("nonzero norm", |v| {
            v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-3
        })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in logits_strategy()) {
        let probs = softmax(&logits);
        prop_assert!(probs.iter().all(|&p| p >= 0.0 && p.is_finite()));
        let total: f64 = probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        a in vector_strategy(5),
        b in vector_strategy(5),
        scale in 0.05..20.0f64,
    ) {
        let mut g = Graph::new();
        let na = g.constant(&[5], &a).unwrap();
        let nb = g.constant(&[5], &b).unwrap();
        let ab = g.cosine(na, nb).unwrap();
        let ba = g.cosine(nb, na).unwrap();
        prop_assert!((g.scalar_value(ab) - g.scalar_value(ba)).abs() < 1e-12);
        prop_assert!(g.scalar_value(ab).abs() <= 1.0 + 1e-12);

        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let ns = g.constant(&[5], &scaled).unwrap();
        let sb = g.cosine(ns, nb).unwrap();
        prop_assert!((g.scalar_value(ab) - g.scalar_value(sb)).abs() < 1e-12);
    }

    #[test]
    fn chained_norms_respect_the_convexity_bound(
        steps in prop::collection::vec(vector_strategy(6), 2..5),
        lambdas in prop::collection::vec(0.0..=1.0f64, 5),
    ) {
        let mut g = Graph::new();
        let raw: Vec<Vec<usize>> = steps
            .iter()
            .map(|v| vec![g.constant(&[6], v).unwrap()])
            .collect();
        let lambda_nodes: Vec<usize> = lambdas[..steps.len()]
            .iter()
            .map(|&l| g.constant_scalar(l).unwrap())
            .collect();
        let state = chain_embeddings(&mut g, &raw, &lambda_nodes).unwrap();
        let norm = |g: &Graph, id: usize| -> f64 {
            g.value(id).iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        for j in 1..steps.len() {
            let chained = norm(&g, state.chained[j][0]);
            let prev = norm(&g, state.chained[j - 1][0]);
            let fresh = norm(&g, state.raw[j][0]);
            prop_assert!(chained <= prev.max(fresh) + 1e-12,
                "step {j}: {chained} > max({prev}, {fresh})");
        }
    }

    #[test]
    fn unrolled_weights_are_a_convex_combination(
        lambdas in prop::collection::vec(0.0..=1.0f64, 1..7),
    ) {
        let weights = unrolled_weights(&lambdas);
        prop_assert_eq!(weights.len(), lambdas.len());
        prop_assert!(weights.iter().all(|&w| w >= 0.0));
        let total: f64 = weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {}", total);
    }

    #[test]
    fn harmonic_mean_sits_between_its_arguments(
        a in 0.01..100.0f64,
        b in 0.01..100.0f64,
    ) {
        let h = harmonic_mean(a, b).unwrap();
        let h_flipped = harmonic_mean(b, a).unwrap();
        prop_assert!((h - h_flipped).abs() < 1e-9);
        prop_assert!(h >= a.min(b) - 1e-9 && h <= a.max(b) + 1e-9);
    }
}
