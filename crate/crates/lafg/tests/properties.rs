//! Property-based checks for the numerically load-bearing primitives.

use proptest::prelude::*;

use lafg::align::{kl, softmax};
use lafg::eval::RetrievalIndex;
use lafg::metric::pair_distance;
use lafg::vocab::fusion_weights;

proptest! {
    /// KL divergence between softmax distributions is non-negative and zero
    /// for identical logits.
    #[test]
    fn kl_nonnegative(logits_p in prop::collection::vec(-10.0f64..10.0, 2..12),
                      shift in -5.0f64..5.0) {
        let logits_q: Vec<f64> = logits_p.iter().map(|v| v + shift).collect();
        let p = softmax(&logits_p);
        let q = softmax(&logits_q);
        prop_assert!(kl(&p, &q).unwrap() >= -1e-12);
        // Softmax is shift-invariant, so a uniform shift gives KL = 0.
        prop_assert!(kl(&p, &q).unwrap() < 1e-9);
    }

    /// Fusion weights form a probability vector regardless of score scale.
    #[test]
    fn fusion_weights_are_a_distribution(scores in prop::collection::vec(-50.0f32..50.0, 1..40)) {
        let w = fusion_weights(&scores).unwrap();
        prop_assert_eq!(w.len(), scores.len());
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Order-preserving: a higher score never gets a lower weight.
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] > scores[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    /// The pair distance lives in [0, 4] and is symmetric.
    #[test]
    fn pair_distance_bounded_and_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        prop_assume!(a.iter().any(|&v| v.abs() > 1e-3));
        prop_assume!(b.iter().any(|&v| v.abs() > 1e-3));
        let d = pair_distance(&a, &b).unwrap();
        prop_assert!((-1e-9..=4.0 + 1e-9).contains(&d));
        prop_assert!((d - pair_distance(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!(pair_distance(&a, &a).unwrap().abs() < 1e-9);
    }

    /// Recall@k never decreases with k and is invariant to per-item scaling.
    #[test]
    fn recall_monotone_and_scale_invariant(
        seedlike in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0u32..4), 6..24),
        scale in 0.1f64..10.0,
    ) {
        let embeddings: Vec<Vec<f64>> = seedlike.iter().map(|s| vec![s.0, s.1, s.2]).collect();
        prop_assume!(embeddings.iter().all(|e| e.iter().any(|&v| v.abs() > 1e-3)));
        let labels: Vec<u32> = seedlike.iter().map(|s| s.3).collect();
        let index = RetrievalIndex::build(embeddings.clone(), labels.clone()).unwrap();
        let ks = [1usize, 2, 4];
        let recall = index.recall_at_k(&ks).unwrap();
        prop_assert!(recall[&1] <= recall[&2]);
        prop_assert!(recall[&2] <= recall[&4]);

        let scaled: Vec<Vec<f64>> = embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| e.iter().map(|v| v * scale * (1.0 + i as f64)).collect())
            .collect();
        let scaled_index = RetrievalIndex::build(scaled, labels).unwrap();
        prop_assert_eq!(recall, scaled_index.recall_at_k(&ks).unwrap());
    }
}
