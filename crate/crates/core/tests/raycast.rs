mod common;

use common::march::{march_scan, random_case};
use navgym_core::geometry::Scanner;
use navgym_core::{cast_scan, cast_scan_scalar, ScannerSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn batched_caster_matches_marching_oracle() {
    let spec = ScannerSpec::default();
    let scanner = Scanner::new(spec.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = 0;
    for case in 0..25 {
        let (pose, obstacles) = random_case(&mut rng);
        let scan = scanner.cast(&pose, &obstacles);
        let oracle = march_scan(&pose, &obstacles, &spec);
        for (j, (r, m)) in scan.ranges.iter().zip(&oracle).enumerate() {
            assert!((r - m).abs() <= 2e-3, "case {case} beam {j}: cast {r} oracle {m}");
            hits += usize::from(*m < spec.max_range);
        }
    }
    // the clutter must actually be in view for this to mean anything
    assert!(hits > 25 * 1081 / 4, "only {hits} beams hit");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_and_batched_agree(seed in any::<u64>()) {
        let spec = ScannerSpec::default();
        let (pose, obstacles) = random_case(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = cast_scan(&pose, &obstacles, &spec);
        let b = cast_scan_scalar(&pose, &obstacles, &spec);
        for (x, y) in a.ranges.iter().zip(&b.ranges) {
            prop_assert!((x - y).abs() <= 1e-9, "{} vs {}", x, y);
        }
    }
}
