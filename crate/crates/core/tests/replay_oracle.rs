//! Randomized equivalence between the replay buffer and the exhaustive
//! O(n^2) reference model, plus the buffer's global invariants.

mod common;

use common::oracles::BufOracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vio_core::losses::TripletBatchItem;
use vio_core::model::FeatureVector;
use vio_core::replay::Buffer;
use vio_core::Tensor;

fn tiny_item() -> TripletBatchItem {
    let img = Tensor::full(&[2, 2, 3], 0.5);
    TripletBatchItem::new([img.clone(), img.clone(), img], [1.0, 1.0], [0.1, 0.1]).unwrap()
}

fn random_feature(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVector {
    // Occasionally duplicate a canonical direction to force rejections
    // and near-parallel pairs.
    let raw = if rng.gen_bool(0.15) {
        let mut v = vec![0.0f32; dim];
        v[rng.gen_range(0..dim)] = 1.0;
        v[0] += rng.gen_range(-0.05..0.05f32);
        v
    } else {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0f32)).collect()
    };
    FeatureVector::from_raw(raw).unwrap()
}

#[test]
fn buffer_matches_exhaustive_model_on_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let capacity = rng.gen_range(3..=20);
        let threshold = [0.8f32, 0.95, 1.0][case % 3];
        let dim = rng.gen_range(4..=16);
        let mut buf = Buffer::new(capacity, threshold);
        let mut oracle = BufOracle::new(capacity, threshold);
        let inserts = rng.gen_range(10..60);
        for _ in 0..inserts {
            let f = random_feature(&mut rng, dim);
            let got = buf.maybe_add(tiny_item(), f.clone(), "d");
            let want = oracle.insert(&f);
            assert_eq!(got.admitted, want.admitted, "case {case}");
            assert_eq!(got.max_sim, want.max_sim, "case {case}");
            assert_eq!(got.evicted_id, want.evicted_id, "case {case}");
            assert!(buf.len() <= capacity);
            // Retained pairwise similarity stays below the threshold.
            for (i, a) in buf.samples().iter().enumerate() {
                for b in &buf.samples()[i + 1..] {
                    let sim = vio_core::replay::cosine_similarity(&a.feature, &b.feature);
                    assert!(
                        sim < threshold || (threshold - sim).abs() < 1e-6,
                        "pair similarity {sim} >= threshold {threshold}"
                    );
                }
            }
        }
    }
}

#[test]
fn capacity_never_exceeded_under_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let capacity = rng.gen_range(1..=6);
        let mut buf = Buffer::new(capacity, rng.gen_range(0.5..1.0));
        for _ in 0..rng.gen_range(1..40) {
            let f = random_feature(&mut rng, 6);
            buf.maybe_add(tiny_item(), f, "d");
            assert!(buf.len() <= capacity);
        }
        let ids: Vec<u64> = buf.samples().iter().map(|s| s.id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
}
