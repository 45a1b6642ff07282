//! Property tests for the set-algebra invariants: support additivity,
//! distribution of linear maps over Minkowski sums, halfspace-conversion
//! losslessness, and the Pontryagin/Minkowski adjunction.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use stmpc::lp::LpOutcome;
use stmpc::sets::{HPolytope, Zonotope};

fn zonotope_strategy(dim: usize, max_gens: usize) -> impl Strategy<Value = Zonotope> {
    (1..=max_gens)
        .prop_flat_map(move |g| {
            (
                proptest::collection::vec(-2.0..2.0f64, dim),
                proptest::collection::vec(-1.0..1.0f64, dim * g),
            )
                .prop_map(move |(c, gens)| {
                    Zonotope::new(
                        DVector::from_vec(c),
                        DMatrix::from_row_iterator(dim, g, gens.into_iter()),
                    )
                })
        })
        .no_shrink()
}

fn direction_strategy(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("nonzero direction", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn support_is_additive_under_minkowski_sum(
        z1 in zonotope_strategy(2, 6),
        z2 in zonotope_strategy(2, 6),
        d in direction_strategy(2),
    ) {
        let sum = z1.minkowski_sum(&z2).unwrap();
        let lhs = sum.support(&d);
        let rhs = z1.support(&d) + z2.support(&d);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn affine_map_distributes_over_minkowski_sum(
        z1 in zonotope_strategy(2, 5),
        z2 in zonotope_strategy(2, 5),
        m in proptest::collection::vec(-1.5..1.5f64, 4),
        d in direction_strategy(2),
    ) {
        let map = DMatrix::from_row_slice(2, 2, &m);
        let lhs = z1.minkowski_sum(&z2).unwrap().affine_map(&map);
        let rhs = z1.affine_map(&map).minkowski_sum(&z2.affine_map(&map)).unwrap();
        prop_assert!((lhs.support(&d) - rhs.support(&d)).abs() <= 1e-12 * (1.0 + lhs.support(&d).abs()));
    }

    #[test]
    fn scaling_scales_support(
        z in zonotope_strategy(2, 6),
        lambda in 0.0..3.0f64,
        d in direction_strategy(2),
    ) {
        let scaled = z.scale(lambda).unwrap();
        prop_assert!((scaled.support(&d) - lambda * z.support(&d)).abs() <= 1e-12);
    }

    #[test]
    fn halfspace_conversion_is_lossless(z in zonotope_strategy(2, 6)) {
        // full-rank check happens inside; degenerate draws are skipped
        let converted = match z.to_hpolytope(16) {
            Ok((p, _)) => p,
            Err(_) => return Ok(()),
        };
        prop_assert!(converted.contains_zonotope(&z, 1e-9));
        for i in 0..16 {
            let th = std::f64::consts::TAU * (i as f64) / 16.0;
            let d = DVector::from_vec(vec![th.cos(), th.sin()]);
            match converted.maximize(&d).unwrap() {
                LpOutcome::Optimal { value, .. } => {
                    prop_assert!((value - z.support(&d)).abs() <= 1e-9);
                }
                other => prop_assert!(false, "unexpected LP outcome {other:?}"),
            }
        }
    }

    #[test]
    fn pontryagin_then_minkowski_stays_inside(
        z in zonotope_strategy(2, 4),
        half in (0.5..3.0f64, 0.5..3.0f64),
    ) {
        // origin-centered tube against a box, per the tightening use-case
        let z = Zonotope::new(DVector::zeros(2), z.generators().clone());
        let p = HPolytope::from_box(
            &DVector::from_vec(vec![-half.0, -half.1]),
            &DVector::from_vec(vec![half.0, half.1]),
        );
        let diff = p.pontryagin_diff(&z).unwrap();
        if diff.is_empty(1e-9).unwrap() {
            return Ok(());
        }
        for i in 0..24 {
            let th = std::f64::consts::TAU * (i as f64) / 24.0;
            let d = DVector::from_vec(vec![th.cos(), th.sin()]);
            let supp_diff = match diff.maximize(&d).unwrap() {
                LpOutcome::Optimal { value, .. } => value,
                other => return Err(TestCaseError::fail(format!("unexpected {other:?}"))),
            };
            let supp_p = match p.maximize(&d).unwrap() {
                LpOutcome::Optimal { value, .. } => value,
                other => return Err(TestCaseError::fail(format!("unexpected {other:?}"))),
            };
            prop_assert!(supp_diff + z.support(&d) <= supp_p + 1e-9);
        }
    }
}
