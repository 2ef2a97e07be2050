//! Property tests for the contracts that hold over the whole input space:
//! transform determinism and shape preservation, ranking invariance under
//! monotone rescaling, AUROC invariance under strictly increasing score
//! transforms, and cache round-trips.

use ndarray::{Array2, Array4};
use proptest::prelude::*;

use kex_core::eval_report::auroc;
use kex_core::knowledge_encoder::{CacheKey, EmbeddingCache, EmbeddingSet};
use kex_core::protocols::GroundTruth;
use kex_core::transform_bank::{self, ImageBatch};
use kex_core::transport_ranker::{select_pairs, RankEntry, TransformRanking};

fn arb_batch() -> impl Strategy<Value = ImageBatch> {
    // small square images; pixel grid drawn from a coarse set keeps cases readable
    (1usize..3, 6usize..10, any::<u64>()).prop_map(|(n, side, seed)| {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 256) as f64 / 255.0
        };
        let pixels = Array4::from_shape_fn((n, side, side, 3), |_| next());
        let ids = (0..n).map(|i| format!("p{i}")).collect();
        ImageBatch::new(pixels, ids).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transforms_are_deterministic_and_shape_preserving(
        batch in arb_batch(),
        severity in 1u8..=6,
        seed in any::<u64>(),
        which in 0usize..transform_bank::BANK_SIZE,
    ) {
        let spec = &transform_bank::list_transforms(severity).unwrap()[which];
        let a = transform_bank::apply(spec, &batch, seed).unwrap();
        let b = transform_bank::apply(spec, &batch, seed).unwrap();
        prop_assert_eq!(a.pixels(), b.pixels());
        prop_assert_eq!(a.image_dim(), batch.image_dim());
        prop_assert_eq!(a.sample_ids(), batch.sample_ids());
        for v in a.pixels().iter() {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn pair_policy_depends_only_on_distance_order(
        mut raw in proptest::collection::vec(0.0f64..100.0, 10),
        scale in 0.1f64..10.0,
        offset in 0.0f64..5.0,
        k in 1usize..=5,
    ) {
        raw.sort_by(f64::total_cmp);
        let bank = transform_bank::Bank::at(1).unwrap();
        let entries: Vec<RankEntry> = bank
            .ids()
            .zip(&raw)
            .map(|(id, &d)| RankEntry { transform: id.to_string(), distance: d })
            .collect();
        let ranking = TransformRanking { class_id: "c".into(), entries: entries.clone() };
        let rescaled = TransformRanking {
            class_id: "c".into(),
            entries: entries
                .iter()
                .map(|e| RankEntry {
                    transform: e.transform.clone(),
                    // strictly increasing map
                    distance: e.distance * scale + offset + (e.distance).exp_m1().abs() * 0.01,
                })
                .collect(),
        };
        let a = select_pairs(&ranking, k).unwrap();
        let b = select_pairs(&rescaled, k).unwrap();
        prop_assert_eq!(a.positives, b.positives);
        prop_assert_eq!(a.negatives, b.negatives);
    }

    #[test]
    fn auroc_invariant_under_strictly_increasing_transforms(
        scores in proptest::collection::vec(-8.0f64..8.0, 4..60),
        n_anomaly in 1usize..3,
        gain in 0.05f64..4.0,
    ) {
        let n = scores.len();
        let n_anomaly = n_anomaly.min(n - 1);
        let labels: Vec<GroundTruth> = (0..n)
            .map(|i| if i < n_anomaly { GroundTruth::Anomaly } else { GroundTruth::Normal })
            .collect();
        let base = auroc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (s * gain).tanh() * 2.0 + 0.5).collect();
        // the transform is strictly increasing over the reals, but f64 tanh
        // saturates; only keep cases where no distinct scores collapsed
        for i in 0..n {
            for j in 0..n {
                prop_assume!((scores[i] == scores[j]) == (mapped[i] == mapped[j]));
            }
        }
        prop_assert_eq!(auroc(&mapped, &labels).unwrap(), base);
    }

    #[test]
    fn cache_round_trips_arbitrary_matrices(
        rows in 1usize..6,
        cols in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let matrix = Array2::from_shape_fn((rows, cols), |_| next());
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        let key = CacheKey {
            dataset: "d".into(),
            class: "c".into(),
            transform: "flip".into(),
            severity: 1,
            encoder: "e".into(),
            transform_seed: seed,
        };
        let set = EmbeddingSet {
            encoder_id: "e".into(),
            dataset_id: "d".into(),
            class_id: "c".into(),
            transform_id: "flip".into(),
            severity: 1,
            matrix: matrix.clone(),
            normalized: false,
        };
        cache.put(&key, &set).unwrap();
        let got = cache.get(&key).unwrap().expect("hit");
        prop_assert_eq!(got.matrix, matrix);
    }
}
