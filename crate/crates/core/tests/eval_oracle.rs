mod common;

use common::map_oracle::{oracle_ap, overlap, random_instance};
use enjoint::eval::{average_precision, evaluate_map};
use enjoint::model::Detection;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn map_matches_brute_force_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let (dets, gts) = random_instance(&mut r, 3);
        let got = evaluate_map(&dets, &gts, 3).unwrap();
        let mut sum50 = 0.0;
        let mut sum5095 = 0.0;
        let mut present = 0;
        for c in 0..3 {
            let has = dets.iter().flatten().any(|d| d.class_id == c) || gts.iter().flatten().any(|g| g.class_id == c);
            if !has {
                continue;
            }
            present += 1;
            let ap50 = oracle_ap(&dets, &gts, c, 0.5);
            assert!((got.per_class_ap50[&c] - ap50).abs() < 1e-9);
            let ap = (0..10).map(|k| oracle_ap(&dets, &gts, c, 0.5 + 0.05 * k as f64)).sum::<f64>() / 10.0;
            assert!((got.per_class_ap5095[&c] - ap).abs() < 1e-9);
            sum50 += ap50;
            sum5095 += ap;
        }
        if present > 0 {
            assert!((got.map50 - sum50 / present as f64).abs() < 1e-9);
            assert!((got.map5095 - sum5095 / present as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn extra_true_positive_never_lowers_ap() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (mut dets, gts) = random_instance(&mut r, 1);
        // an exact, most confident hit on a still-unclaimed ground truth
        let Some((i, g)) = gts.iter().enumerate().find_map(|(i, g)| g.first().map(|g| (i, *g))) else { continue };
        dets[i].retain(|d| overlap(&d.bbox, &g.bbox) < 0.5);
        let trimmed = average_precision(&dets, &gts, 0.5);
        dets[i].push(Detection { bbox: g.bbox, class_id: g.class_id, confidence: 2.0 });
        let after = average_precision(&dets, &gts, 0.5);
        assert!(after >= trimmed - 1e-12, "{after} < {trimmed}");
    }
}

proptest! {
    #[test]
    fn ap_is_invariant_to_monotone_confidence_rescaling(seed in 0u64..10_000, scale in 0.01f32..1.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_instance(&mut r, 2);
        let scaled: Vec<Vec<Detection>> = dets
            .iter()
            .map(|ds| ds.iter().map(|d| Detection { confidence: d.confidence * scale, ..*d }).collect())
            .collect();
        let a = evaluate_map(&dets, &gts, 2).unwrap();
        let b = evaluate_map(&scaled, &gts, 2).unwrap();
        prop_assert!((a.map50 - b.map50).abs() < 1e-12);
        prop_assert!((a.map5095 - b.map5095).abs() < 1e-12);
    }

    #[test]
    fn ap_lies_in_unit_interval_and_map5095_below_map50(seed in 0u64..10_000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_instance(&mut r, 3);
        let m = evaluate_map(&dets, &gts, 3).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.map50));
        prop_assert!(m.map5095 <= m.map50 + 1e-12);
    }
}
