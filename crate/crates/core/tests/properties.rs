use proptest::prelude::*;
use roughlab_core::field::{GridSpec, ScalarField};
use roughlab_core::group::GroupSpec;
use roughlab_core::numerics::{ols, percentile};
use roughlab_core::sparse::cz_decompose;
use roughlab_core::weights::{ap_characteristics, BallSampler, WeightPreset};

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

proptest! {
    #[test]
    fn heisenberg_law_is_associative(x in point(3), y in point(3), z in point(3)) {
        let g = GroupSpec::heisenberg();
        let l = g.multiply(&g.multiply(&x, &y).unwrap(), &z).unwrap();
        let r = g.multiply(&x, &g.multiply(&y, &z).unwrap()).unwrap();
        for (a, b) in l.iter().zip(&r) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn inverse_cancels(x in point(3)) {
        let g = GroupSpec::heisenberg();
        let e = g.multiply(&x, &g.inverse(&x).unwrap()).unwrap();
        prop_assert!(e.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dilations_are_automorphisms(x in point(3), y in point(3), r in 0.1f64..10.0) {
        let g = GroupSpec::heisenberg();
        let lhs = g.dilate(r, &g.multiply(&x, &y).unwrap()).unwrap();
        let rhs = g.multiply(&g.dilate(r, &x).unwrap(), &g.dilate(r, &y).unwrap()).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!(close(*a, *b, 1e-11));
        }
    }

    #[test]
    fn quasi_norm_is_homogeneous_and_symmetric(x in point(3), r in 0.1f64..10.0) {
        let g = GroupSpec::heisenberg();
        let n = g.quasi_norm(&x);
        prop_assert!(close(g.quasi_norm(&g.dilate(r, &x).unwrap()), r * n, 1e-12));
        prop_assert!(close(g.quasi_norm(&g.inverse(&x).unwrap()), n, 1e-12));
    }

    #[test]
    fn quasi_triangle_holds(x in point(3), y in point(3)) {
        let g = GroupSpec::heisenberg();
        let xy = g.multiply(&x, &y).unwrap();
        prop_assert!(g.quasi_norm(&xy) <= g.a0() * (g.quasi_norm(&x) + g.quasi_norm(&y)) * (1.0 + 1e-12));
    }

    #[test]
    fn ols_recovers_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 3usize..20) {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let fit = ols(&x, &y).unwrap();
        prop_assert!((fit.slope - a).abs() < 1e-9 && (fit.intercept - b).abs() < 1e-9);
    }

    #[test]
    fn percentiles_are_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..50), q1 in 0.0f64..100.0, q2 in 0.0f64..100.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cz_reconstructs_random_fields(
        bumps in prop::collection::vec((-0.7f64..0.7, -0.7f64..0.7, 0.1f64..0.4, -2.0f64..2.0), 1..5),
        height in 1.2f64..20.0,
    ) {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::for_group(&g, 1.0, 33).unwrap();
        let f = ScalarField::from_fn(&grid, |x| {
            bumps.iter().map(|(a, b, s, c)| {
                let r2 = ((x[0] - a).powi(2) + (x[1] - b).powi(2)) / (s * s);
                if r2 < 1.0 { c * (1.0 - r2).powi(2) } else { 0.0 }
            }).sum()
        });
        let mean = f.lp_norm(1.0, None).unwrap() / (grid.len() as f64 * grid.cell_volume());
        prop_assume!(mean > 0.0);
        let d = cz_decompose(&g, &f, height * mean).unwrap();
        let chk = d.check(&g, &f);
        prop_assert!(chk.reconstruction < 1e-10);
        prop_assert!(chk.support_ok);
        prop_assert!(chk.mean_zero < 1e-8);
        prop_assert!(chk.constant() <= 8.0);
    }

    #[test]
    fn ap_characteristic_is_scale_invariant(beta in -1.5f64..1.5, c in 0.1f64..10.0) {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::for_group(&g, 1.0, 25).unwrap();
        let w = WeightPreset::Power(beta).field(&g, &grid);
        let s = BallSampler::default();
        let a = ap_characteristics(&g, &w, 2.0, &s).unwrap();
        let b = ap_characteristics(&g, &w.scale(c), 2.0, &s).unwrap();
        prop_assert!(close(a.ap, b.ap, 1e-9));
        prop_assert!(a.ap >= 1.0 - 1e-12);
    }
}

#[test]
fn field_csv_roundtrip() {
    let grid = GridSpec::symmetric(&[1.0, 2.0], 9).unwrap();
    let f = ScalarField::from_fn(&grid, |x| x[0] * x[0] - 0.3 * x[1]);
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let g = ScalarField::read_csv(buf.as_slice()).unwrap();
    assert_eq!(g.grid(), f.grid());
    for (a, b) in f.values().iter().zip(g.values()) {
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
    }
}
