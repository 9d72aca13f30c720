use proptest::prelude::*;

use relaxrl::envelope::{biconjugate, conjugate, default_dual_grid, upper_envelope, SampledFunction};

fn samples() -> impl Strategy<Value = SampledFunction> {
    (prop::collection::vec(-5.0f64..5.0, 3..40), -2.0f64..2.0, 0.1f64..3.0).prop_map(|(values, lo, width)| {
        let k = values.len();
        let grid = (0..k).map(|i| lo + width * i as f64 / (k - 1) as f64).collect();
        SampledFunction::new(grid, values).unwrap()
    })
}

fn second_differences(v: &[f64]) -> impl Iterator<Item = f64> + '_ {
    v.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2])
}

proptest! {
    #[test]
    fn biconjugate_is_a_convex_minorant(f in samples()) {
        let g = biconjugate(&f);
        let tol = 1e-9 * (1.0 + f.lipschitz() * f.step());
        for (a, b) in g.values().iter().zip(f.values()) {
            prop_assert!(*a <= b + tol);
        }
        for d in second_differences(g.values()) {
            prop_assert!(d >= -tol);
        }
    }

    #[test]
    fn upper_envelope_is_a_concave_majorant(f in samples()) {
        let g = upper_envelope(&f);
        let tol = 1e-9 * (1.0 + f.lipschitz() * f.step());
        for (a, b) in g.values().iter().zip(f.values()) {
            prop_assert!(*a >= b - tol);
        }
        for d in second_differences(g.values()) {
            prop_assert!(d <= tol);
        }
        prop_assert!((g.max() - f.max()).abs() <= tol);
    }

    #[test]
    fn envelopes_are_idempotent(f in samples()) {
        let g = upper_envelope(&f);
        let h = upper_envelope(&g);
        for (a, b) in g.values().iter().zip(h.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn fenchel_young_holds_on_the_grids(f in samples()) {
        let duals = default_dual_grid(&f);
        let fs = conjugate(&f, &duals).unwrap();
        for (u, fu) in fs.grid().iter().zip(fs.values()) {
            for (z, fz) in f.grid().iter().zip(f.values()) {
                prop_assert!(fu + fz >= u * z - 1e-9 * (1.0 + (u * z).abs()));
            }
        }
    }
}
