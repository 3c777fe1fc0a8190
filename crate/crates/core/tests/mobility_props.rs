mod common;

use cdrscope_core::mobility::{entropy, radius_of_gyration, EntropyNorm, VisitVector};
use cdrscope_core::spatial::geometry::Point;
use proptest::prelude::*;

fn visits() -> impl Strategy<Value = Vec<((f64, f64), u64)>> {
    prop::collection::vec(((-50.0..50.0f64, -50.0..50.0f64), 1..20u64), 1..20)
}

fn vector(v: &[((f64, f64), u64)]) -> VisitVector {
    VisitVector::new(v.iter().map(|&((x, y), n)| (Point::new(x, y), n)).collect()).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #[test]
    fn gyration_matches_both_oracles(v in visits()) {
        let r = radius_of_gyration(&vector(&v));
        prop_assert!((r - common::gyration_direct(&v)).abs() <= 1e-9 * r + 1e-12 * 50.0);
        prop_assert!((r - common::gyration_pairwise(&v)).abs() <= 1e-9 * r + 1e-12 * 50.0);
    }

    #[test]
    fn gyration_is_rigid_motion_invariant(v in visits(), dx in -1e3..1e3f64, dy in -1e3..1e3f64, a in 0.0..6.3f64) {
        let r = radius_of_gyration(&vector(&v));
        let (s, c) = a.sin_cos();
        let moved: Vec<_> = v.iter().map(|&((x, y), n)| ((c * x - s * y + dx, s * x + c * y + dy), n)).collect();
        prop_assert!((radius_of_gyration(&vector(&moved)) - r).abs() <= 1e-9 * (1.0 + r));
    }

    #[test]
    fn gyration_scales_linearly(v in visits(), k in 0.01..100.0f64) {
        let r = radius_of_gyration(&vector(&v));
        let scaled: Vec<_> = v.iter().map(|&((x, y), n)| ((k * x, k * y), n)).collect();
        prop_assert!(close(radius_of_gyration(&vector(&scaled)), k * r, 1e-9));
    }

    #[test]
    fn gyration_ignores_count_scaling(v in visits(), m in 2..5u64) {
        let scaled: Vec<_> = v.iter().map(|&(p, n)| (p, n * m)).collect();
        prop_assert!(close(radius_of_gyration(&vector(&scaled)), radius_of_gyration(&vector(&v)), 1e-9));
    }

    #[test]
    fn entropy_bounded_and_matches_oracle(v in visits()) {
        let vv = vector(&v);
        let counts: Vec<u64> = v.iter().map(|x| x.1).collect();
        let e = entropy(&vv, EntropyNorm::Activities);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((e - common::entropy_direct(&counts)).abs() <= 1e-12);
        let l = entropy(&vv, EntropyNorm::Locations);
        prop_assert!((0.0..=1.0).contains(&l));
        prop_assert!(l + 1e-12 >= e);
    }

    #[test]
    fn single_location_is_still(x in -50.0..50.0f64, y in -50.0..50.0f64, n in 1..1000u64) {
        let v = vector(&[((x, y), n)]);
        prop_assert_eq!(radius_of_gyration(&v), 0.0);
        prop_assert_eq!(entropy(&v, EntropyNorm::Activities), 0.0);
    }
}

#[test]
fn spread_visits_reach_one() {
    for n in [2usize, 10, 100] {
        let v: Vec<_> = (0..n).map(|i| ((i as f64, 0.0), 1)).collect();
        assert!((entropy(&vector(&v), EntropyNorm::Activities) - 1.0).abs() <= 1e-12);
        assert!((entropy(&vector(&v), EntropyNorm::Locations) - 1.0).abs() <= 1e-12);
    }
    let e = entropy(&vector(&[((0.0, 0.0), 3), ((1.0, 0.0), 1)]), EntropyNorm::Activities);
    assert!((e - 0.405_639).abs() < 1e-6, "{e}");
}
